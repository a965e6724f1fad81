//! Synthetic labeled utterances: transcript plus gold call-sign plus
//! surveillance scene plus command labels, with command-conditioned spatial
//! structure.

pub mod jsonl;
pub mod region;
pub mod templates;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{expand_icao, DesignatorTable};
use crate::seeds::derive_seed;
use region::RegionModel;
use templates::{instantiate, Template};

pub use region::{AIRSPACE_HALF_XY, AIRSPACE_Z_MAX};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("split ratios must sum to 1 (got {0})")]
    BadRatios(f64),
    #[error("keyword table line {line}: {msg}")]
    KeywordTable { line: usize, msg: String },
    #[error("unknown command type `{0}`")]
    UnknownCommand(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandType {
    Horizontal,
    Vertical,
    Ils,
    Taxi,
    Clearing,
    Greeting,
}

impl CommandType {
    pub const ALL: [CommandType; 6] = [
        CommandType::Horizontal,
        CommandType::Vertical,
        CommandType::Ils,
        CommandType::Taxi,
        CommandType::Clearing,
        CommandType::Greeting,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CommandType::Horizontal => "horizontal",
            CommandType::Vertical => "vertical",
            CommandType::Ils => "ils",
            CommandType::Taxi => "taxi",
            CommandType::Clearing => "clearing",
            CommandType::Greeting => "greeting",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CorpusError> {
        CommandType::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| CorpusError::UnknownCommand(name.to_string()))
    }

    /// Position in [`CommandType::ALL`], used as classifier output index.
    pub fn index(&self) -> usize {
        CommandType::ALL.iter().position(|c| c == self).unwrap()
    }
}

pub type CommandLabelSet = BTreeSet<CommandType>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneState {
    pub callsign: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(rename = "t")]
    pub time: f64,
}

impl PlaneState {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveillanceScene {
    pub planes: Vec<PlaneState>,
    pub gold_index: usize,
}

impl SurveillanceScene {
    pub fn gold(&self) -> &PlaneState {
        &self.planes[self.gold_index]
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.planes.is_empty() || self.planes.len() > 60 {
            return Err(CorpusError::InvalidScene(format!("{} planes", self.planes.len())));
        }
        if self.gold_index >= self.planes.len() {
            return Err(CorpusError::InvalidScene("gold index out of range".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.planes {
            if !seen.insert(p.callsign.as_str()) {
                return Err(CorpusError::InvalidScene(format!("duplicate call-sign {}", p.callsign)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub target_wer: Option<f64>,
    pub clipped_words: Option<usize>,
}

/// One labeled utterance. `transcript: None` is the missing-transcript case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleWire", into = "SampleWire")]
pub struct Sample {
    pub id: String,
    pub transcript: Option<Vec<String>>,
    pub gold_icao: String,
    pub commands: CommandLabelSet,
    pub scene: SurveillanceScene,
    pub provenance: Provenance,
}

/// On-disk shape: the scene is stored as a flat plane list, the gold plane
/// identified by its call-sign.
#[derive(Serialize, Deserialize)]
struct SampleWire {
    id: String,
    transcript: Option<Vec<String>>,
    gold_icao: String,
    commands: CommandLabelSet,
    planes: Vec<PlaneState>,
    provenance: Provenance,
}

impl From<Sample> for SampleWire {
    fn from(s: Sample) -> Self {
        SampleWire {
            id: s.id,
            transcript: s.transcript,
            gold_icao: s.gold_icao,
            commands: s.commands,
            planes: s.scene.planes,
            provenance: s.provenance,
        }
    }
}

impl TryFrom<SampleWire> for Sample {
    type Error = String;

    fn try_from(w: SampleWire) -> Result<Self, String> {
        let gold_index = w
            .planes
            .iter()
            .position(|p| p.callsign == w.gold_icao)
            .ok_or_else(|| format!("sample {}: gold call-sign {} not in scene", w.id, w.gold_icao))?;
        Ok(Sample {
            id: w.id,
            transcript: w.transcript,
            gold_icao: w.gold_icao,
            commands: w.commands,
            scene: SurveillanceScene { planes: w.planes, gold_index },
            provenance: w.provenance,
        })
    }
}

/// Key phrases per command type, matched as contiguous token subsequences.
#[derive(Debug, Clone)]
pub struct KeywordTable {
    entries: Vec<(CommandType, Vec<String>)>,
}

impl KeywordTable {
    pub fn bundled() -> Self {
        Self::parse(include_str!("../../data/keywords.tsv")).expect("bundled keyword table is valid")
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (cmd, phrase) = line.split_once('\t').ok_or(CorpusError::KeywordTable {
                line: line_no,
                msg: "expected `command<TAB>phrase`".into(),
            })?;
            let cmd = CommandType::from_name(cmd.trim())?;
            let words: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
            if words.is_empty() {
                return Err(CorpusError::KeywordTable { line: line_no, msg: "empty phrase".into() });
            }
            entries.push((cmd, words));
        }
        Ok(KeywordTable { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[(CommandType, Vec<String>)] {
        &self.entries
    }
}

fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Union of all command types whose key phrases occur in the transcript.
pub fn label_commands(transcript: &[String], table: &KeywordTable) -> CommandLabelSet {
    let mut labels = CommandLabelSet::new();
    for (cmd, phrase) in table.entries() {
        if !labels.contains(cmd) && contains_subsequence(transcript, phrase) {
            labels.insert(*cmd);
        }
    }
    labels
}

/// Random pattern-valid call-sign with a designator from the table.
pub fn random_callsign(rng: &mut ChaCha8Rng, table: &DesignatorTable) -> String {
    let designators: Vec<&str> = table.designators().collect();
    let mut icao = designators[rng.random_range(0..designators.len())].to_string();
    icao.push((b'0' + rng.random_range(0..10u8)) as char);
    // suffix length skews long so clipped utterances keep useful remnants
    let extra = match rng.random_range(0.0..1.0) {
        p if p < 0.15 => 0,
        p if p < 0.45 => 1,
        p if p < 0.80 => 2,
        _ => 3,
    };
    for _ in 0..extra {
        let c = if rng.random_bool(0.5) {
            (b'0' + rng.random_range(0..10u8)) as char
        } else {
            (b'A' + rng.random_range(0..26u8)) as char
        };
        icao.push(c);
    }
    icao
}

const SCENE_TIME: f64 = 1_700_000_000.0;

/// Place the addressed plane per the commands' spatial mixture and everyone
/// else per the background; assign distinct random call-signs.
pub fn generate_scene(
    seed: u64,
    region: &RegionModel,
    commands: &CommandLabelSet,
    plane_count: usize,
    table: &DesignatorTable,
) -> SurveillanceScene {
    assert!(plane_count >= 1, "scene needs at least one plane");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold_index = rng.random_range(0..plane_count);
    let mut callsigns = HashSet::new();
    let mut planes = Vec::with_capacity(plane_count);
    for i in 0..plane_count {
        let mut callsign = random_callsign(&mut rng, table);
        while !callsigns.insert(callsign.clone()) {
            callsign = random_callsign(&mut rng, table);
        }
        let pos = if i == gold_index {
            region.sample_position(commands, &mut rng)
        } else {
            region.sample_background(&mut rng)
        };
        planes.push(PlaneState { callsign, x: pos[0], y: pos[1], z: pos[2], time: SCENE_TIME });
    }
    SurveillanceScene { planes, gold_index }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_samples: usize,
    pub plane_count_min: usize,
    pub plane_count_max: usize,
    pub callsign_initial_p: f64,
    pub second_phrase_p: f64,
    pub split_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_samples: 1100,
            plane_count_min: 20,
            plane_count_max: 40,
            callsign_initial_p: 0.8,
            second_phrase_p: 0.35,
            split_ratios: [9.0 / 11.0, 1.0 / 11.0, 1.0 / 11.0],
            seed: 7,
        }
    }
}

/// One sample: pick one or two command phrases, build the scene conditioned
/// on their labels, and splice the gold call-sign expansion at the start
/// (usually) or end of the utterance.
pub fn generate_sample(
    seed: u64,
    region: &RegionModel,
    templates: &[Template],
    table: &DesignatorTable,
    config: &CorpusConfig,
) -> Sample {
    assert!(!templates.is_empty(), "template set is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5A));

    let pick = |ty: CommandType, rng: &mut ChaCha8Rng| -> &Template {
        let of_type: Vec<&Template> = templates.iter().filter(|t| t.command == ty).collect();
        of_type[rng.random_range(0..of_type.len())]
    };
    let primary_type = CommandType::ALL[rng.random_range(0..CommandType::ALL.len())];
    let primary = pick(primary_type, &mut rng);
    // greeting stays a pure label; other commands may pair up
    let second = if primary_type != CommandType::Greeting
        && rng.random_bool(config.second_phrase_p)
    {
        let others: Vec<CommandType> = CommandType::ALL
            .into_iter()
            .filter(|&c| c != CommandType::Greeting && c != primary_type)
            .collect();
        Some(pick(others[rng.random_range(0..others.len())], &mut rng))
    } else {
        None
    };

    let mut commands = CommandLabelSet::new();
    commands.insert(primary.command);
    let mut phrase = instantiate(primary, &mut rng);
    if let Some(second) = second {
        commands.insert(second.command);
        phrase.extend(instantiate(second, &mut rng));
    }

    let plane_count = rng.random_range(config.plane_count_min..=config.plane_count_max);
    let scene = generate_scene(derive_seed(seed, 0x5C), region, &commands, plane_count, table);
    let gold_icao = scene.gold().callsign.clone();
    let expansion = expand_icao(&gold_icao, table).expect("generated call-sign is valid");

    let transcript = if rng.random_bool(config.callsign_initial_p) {
        let mut t = expansion;
        t.extend(phrase);
        t
    } else {
        let mut t = phrase;
        t.extend(expansion);
        t
    };

    Sample {
        id: format!("s{seed:016x}"),
        transcript: Some(transcript),
        gold_icao,
        commands,
        scene,
        provenance: Provenance::default(),
    }
}

pub fn generate_corpus(
    config: &CorpusConfig,
    region: &RegionModel,
    templates: &[Template],
    table: &DesignatorTable,
) -> Vec<Sample> {
    (0..config.n_samples)
        .map(|i| {
            generate_sample(derive_seed(config.seed, i as u64), region, templates, table, config)
        })
        .collect()
}

/// Deterministic shuffle and largest-remainder split.
pub fn split_dataset(
    samples: Vec<Sample>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), CorpusError> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CorpusError::BadRatios(sum));
    }
    let n = samples.len();
    let mut sizes = [0usize; 3];
    let mut fracs = [(0.0f64, 0usize); 3];
    let mut assigned = 0;
    for (i, r) in ratios.iter().enumerate() {
        let exact = n as f64 * r;
        sizes[i] = exact.floor() as usize;
        fracs[i] = (exact - exact.floor(), i);
        assigned += sizes[i];
    }
    let mut order = fracs;
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..n - assigned {
        sizes[order[k % 3].1] += 1;
    }

    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut samples: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Sample> {
        idx.iter().map(|&i| samples[i].take().unwrap()).collect()
    };
    let train = take(&indices[..sizes[0]]);
    let val = take(&indices[sizes[0]..sizes[0] + sizes[1]]);
    let test = take(&indices[sizes[0] + sizes[1]..]);
    Ok((train, val, test))
}
