//! Phrase templates for synthetic utterances. Placeholders: `#d` draws a
//! digit word, `#a` a phonetic-alphabet word. Every template contains at
//! least one key phrase of its command type so keyword labeling agrees with
//! the template label by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::CommandType;
use crate::grammar::{DIGIT_WORDS, PHONETIC_WORDS};

#[derive(Debug, Clone)]
pub struct Template {
    pub command: CommandType,
    pub pattern: &'static [&'static str],
}

macro_rules! template {
    ($cmd:ident, $($word:literal)+) => {
        Template { command: CommandType::$cmd, pattern: &[$($word),+] }
    };
}

pub fn default_templates() -> Vec<Template> {
    vec![
        template!(Horizontal, "turn" "right" "heading" "#d" "#d" "#d"),
        template!(Horizontal, "turn" "left" "heading" "#d" "#d" "#d"),
        template!(Horizontal, "change" "heading" "to" "#d" "#d" "#d"),
        template!(Horizontal, "fly" "heading" "#d" "#d" "#d"),
        template!(Vertical, "climb" "to" "flight" "level" "#d" "#d" "#d"),
        template!(Vertical, "descend" "to" "flight" "level" "#d" "#d" "#d"),
        template!(Vertical, "climb" "to" "altitude" "#d" "thousand" "feet"),
        template!(Vertical, "descend" "to" "altitude" "#d" "thousand" "feet"),
        template!(Ils, "cleared" "ils" "approach" "runway" "#d" "#d"),
        template!(Ils, "intercept" "the" "localizer" "runway" "#d" "#d"),
        template!(Ils, "expect" "ils" "approach" "runway" "#d" "#d"),
        template!(Taxi, "taxi" "to" "holding" "point" "#a" "via" "taxiway" "#a"),
        template!(Taxi, "taxi" "to" "stand" "#d" "#d"),
        template!(Taxi, "taxi" "via" "taxiway" "#a" "to" "the" "apron"),
        template!(Clearing, "cleared" "for" "takeoff" "runway" "#d" "#d"),
        template!(Clearing, "cleared" "to" "land" "runway" "#d" "#d"),
        template!(Clearing, "line" "up" "and" "wait" "runway" "#d" "#d"),
        template!(Greeting, "good" "morning"),
        template!(Greeting, "good" "afternoon"),
        template!(Greeting, "good" "evening"),
        template!(Greeting, "hello"),
    ]
}

pub fn instantiate(template: &Template, rng: &mut ChaCha8Rng) -> Vec<String> {
    template
        .pattern
        .iter()
        .map(|&tok| match tok {
            "#d" => DIGIT_WORDS[rng.random_range(0..10)].to_string(),
            "#a" => PHONETIC_WORDS[rng.random_range(0..26)].to_string(),
            word => word.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KeywordTable;
    use rand::SeedableRng;

    #[test]
    fn every_template_is_labeled_by_its_own_command() {
        let table = KeywordTable::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for template in default_templates() {
            let phrase = instantiate(&template, &mut rng);
            let labels = crate::corpus::label_commands(&phrase, &table);
            assert!(
                labels.contains(&template.command),
                "{phrase:?} not labeled {:?} (got {labels:?})",
                template.command
            );
            assert_eq!(labels.len(), 1, "{phrase:?} triggers extra labels {labels:?}");
        }
    }

    #[test]
    fn all_command_types_have_templates() {
        let templates = default_templates();
        for cmd in CommandType::ALL {
            assert!(templates.iter().any(|t| t.command == cmd), "{cmd:?} missing");
        }
    }
}
