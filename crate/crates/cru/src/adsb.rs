//! Surveillance ingestion: OpenSky-compatible state vectors from a file or
//! HTTP endpoint, transformed to airport-origin xyz coordinates and filtered
//! to the airspace bounding box.

use std::path::PathBuf;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::corpus::{PlaneState, AIRSPACE_HALF_XY, AIRSPACE_Z_MAX};

#[derive(Debug, Error)]
pub enum AdsbError {
    #[error("malformed state document: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("rate limited by endpoint (HTTP 429)")]
    RateLimited,
    #[error("fetch failed after {attempts} attempts: {last}")]
    Fetch { attempts: usize, last: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub icao24: String,
    pub callsign: String,
    pub lat: f64,
    pub lon: f64,
    pub geo_altitude: f64,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct AirportOrigin {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub earth_radius_m: f64,
}

impl AirportOrigin {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Self {
        AirportOrigin { lat_deg, lon_deg, earth_radius_m: 6_371_000.0 }
    }
}

/// Parse an OpenSky `/states/all` document: `{time, states: [[...]]}` with
/// positional row arrays. Rows without position or call-sign are dropped,
/// call-signs are trimmed of padding spaces.
pub fn parse_state_vectors(raw: &str) -> Result<Vec<StateVector>, AdsbError> {
    let doc: Value = serde_json::from_str(raw).map_err(|e| AdsbError::Parse(e.to_string()))?;
    let top_time = doc.get("time").and_then(Value::as_f64);
    let states = match doc.get("states") {
        Some(Value::Array(rows)) => rows,
        Some(Value::Null) | None => return Ok(Vec::new()),
        Some(other) => return Err(AdsbError::Parse(format!("`states` is not an array: {other}"))),
    };
    let mut out = Vec::with_capacity(states.len());
    for (i, row) in states.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| AdsbError::Parse(format!("state row {i} is not an array")))?;
        let field = |idx: usize| row.get(idx).unwrap_or(&Value::Null);
        let icao24 = match field(0).as_str() {
            Some(s) => s.to_string(),
            None => return Err(AdsbError::Parse(format!("state row {i} has no icao24"))),
        };
        let Some(callsign) = field(1).as_str() else {
            continue;
        };
        let callsign = callsign.trim_end().to_string();
        if callsign.is_empty() {
            continue;
        }
        let (Some(lon), Some(lat), Some(geo_altitude)) =
            (field(5).as_f64(), field(6).as_f64(), field(13).as_f64())
        else {
            continue;
        };
        let time = field(3)
            .as_f64()
            .or_else(|| field(4).as_f64())
            .or(top_time)
            .unwrap_or(0.0);
        out.push(StateVector { icao24, callsign, lat, lon, geo_altitude, time });
    }
    Ok(out)
}

/// Equirectangular local-tangent transform: exact at the origin, under 0.15%
/// error inside the 100 km box.
pub fn enu_transform(sv: &StateVector, origin: &AirportOrigin) -> [f64; 3] {
    let d_lat = (sv.lat - origin.lat_deg).to_radians();
    let d_lon = (sv.lon - origin.lon_deg).to_radians();
    let x = origin.earth_radius_m * origin.lat_deg.to_radians().cos() * d_lon;
    let y = origin.earth_radius_m * d_lat;
    [x, y, sv.geo_altitude]
}

#[derive(Debug, Clone, Copy)]
pub struct BoundingBox {
    pub half_x: f64,
    pub half_y: f64,
    pub z_max: f64,
}

impl Default for BoundingBox {
    fn default() -> Self {
        BoundingBox { half_x: AIRSPACE_HALF_XY, half_y: AIRSPACE_HALF_XY, z_max: AIRSPACE_Z_MAX }
    }
}

impl BoundingBox {
    /// Closed box: boundary points are kept.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        p[0].abs() <= self.half_x && p[1].abs() <= self.half_y && (0.0..=self.z_max).contains(&p[2])
    }
}

/// Transform to local coordinates and keep only planes inside the box.
pub fn bbox_filter(
    states: &[StateVector],
    origin: &AirportOrigin,
    bbox: &BoundingBox,
) -> Vec<PlaneState> {
    states
        .iter()
        .filter_map(|sv| {
            let p = enu_transform(sv, origin);
            bbox.contains(p).then(|| PlaneState {
                callsign: sv.callsign.clone(),
                x: p[0],
                y: p[1],
                z: p[2],
                time: sv.time,
            })
        })
        .collect()
}

/// Keep one state per call-sign: the one nearest the query time, preserving
/// first-seen order.
pub fn dedupe_nearest_in_time(planes: Vec<PlaneState>, query_time: f64) -> Vec<PlaneState> {
    let mut kept: Vec<PlaneState> = Vec::new();
    for plane in planes {
        match kept.iter_mut().find(|p| p.callsign == plane.callsign) {
            Some(existing) => {
                if (plane.time - query_time).abs() < (existing.time - query_time).abs() {
                    *existing = plane;
                }
            }
            None => kept.push(plane),
        }
    }
    kept
}

#[derive(Debug, Clone)]
pub enum AdsbSource {
    File(PathBuf),
    Http { base_url: String, token: Option<String> },
}

impl AdsbSource {
    /// `--adsb-source` accepts a URL or a path.
    pub fn parse(value: &str, token: Option<String>) -> Self {
        if value.starts_with("http://") || value.starts_with("https://") {
            AdsbSource::Http { base_url: value.trim_end_matches('/').to_string(), token }
        } else {
            AdsbSource::File(PathBuf::from(value))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DegreeBbox {
    pub lamin: f64,
    pub lomin: f64,
    pub lamax: f64,
    pub lomax: f64,
}

pub fn states_url(base_url: &str, time: Option<u64>, bbox: Option<&DegreeBbox>) -> String {
    let mut url = format!("{base_url}/states/all");
    let mut sep = '?';
    if let Some(b) = bbox {
        url.push_str(&format!(
            "{sep}lamin={}&lomin={}&lamax={}&lomax={}",
            b.lamin, b.lomin, b.lamax, b.lomax
        ));
        sep = '&';
    }
    if let Some(t) = time {
        url.push_str(&format!("{sep}time={t}"));
    }
    url
}

const FETCH_ATTEMPTS: usize = 3;

/// Return the raw state document. File sources read bytes as-is; HTTP
/// sources query an OpenSky-compatible endpoint with up to three attempts
/// and exponential backoff. HTTP 429 aborts immediately.
pub fn fetch_states(
    source: &AdsbSource,
    time: Option<u64>,
    bbox: Option<&DegreeBbox>,
) -> Result<String, AdsbError> {
    match source {
        AdsbSource::File(path) => Ok(std::fs::read_to_string(path)?),
        AdsbSource::Http { base_url, token } => {
            let url = states_url(base_url, time, bbox);
            let mut last = String::new();
            for attempt in 0..FETCH_ATTEMPTS {
                if attempt > 0 {
                    std::thread::sleep(Duration::from_millis(50 << attempt));
                }
                let mut request = ureq::get(&url);
                if let Some(token) = token {
                    request = request.header("Authorization", &format!("Bearer {token}"));
                }
                match request.call() {
                    Ok(mut response) => match response.body_mut().read_to_string() {
                        Ok(body) => return Ok(body),
                        Err(e) => last = e.to_string(),
                    },
                    Err(ureq::Error::StatusCode(429)) => return Err(AdsbError::RateLimited),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(AdsbError::Fetch { attempts: FETCH_ATTEMPTS, last })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "time": 1700000000,
        "states": [
            ["4b1815", "SWR123  ", "CH", 1700000000, 1700000000, 14.26, 50.6, 3000.0, false, 200.0, 90.0, 0.0, null, 3200.0, "1000", false, 0],
            ["4b1816", "DLH124", "DE", 1700000000, 1700000000, null, null, 3000.0, false, 200.0, 90.0, 0.0, null, 3200.0, "1000", false, 0],
            ["4b1817", null, "AT", 1700000000, 1700000000, 14.3, 50.2, 1000.0, false, 150.0, 10.0, 0.0, null, 1100.0, "2000", false, 0],
            ["4b1818", "RYR77X ", "IE", 1700000000, 1700000000, 15.0, 50.0, 9000.0, false, 220.0, 180.0, 0.0, null, 9100.0, "3000", false, 0]
        ]
    }"#;

    #[test]
    fn parses_and_filters_rows() {
        let states = parse_state_vectors(DOC).unwrap();
        assert_eq!(states.len(), 2); // null position and null callsign dropped
        assert_eq!(states[0].callsign, "SWR123"); // trailing spaces trimmed
        assert_eq!(states[1].callsign, "RYR77X");
    }

    #[test]
    fn empty_states_and_malformed_documents() {
        assert!(parse_state_vectors(r#"{"time": 1, "states": []}"#).unwrap().is_empty());
        assert!(parse_state_vectors(r#"{"time": 1, "states": null}"#).unwrap().is_empty());
        assert!(parse_state_vectors("not json").is_err());
        assert!(parse_state_vectors(r#"{"states": 42}"#).is_err());
    }

    #[test]
    fn transform_is_exact_at_origin() {
        let origin = AirportOrigin::new(50.1, 14.26);
        let sv = StateVector {
            icao24: "x".into(),
            callsign: "X".into(),
            lat: 50.1,
            lon: 14.26,
            geo_altitude: 0.0,
            time: 0.0,
        };
        assert_eq!(enu_transform(&sv, &origin), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_degree_north_is_111km() {
        let origin = AirportOrigin::new(50.0, 14.0);
        let sv = StateVector {
            icao24: "x".into(),
            callsign: "X".into(),
            lat: 51.0,
            lon: 14.0,
            geo_altitude: 3000.0,
            time: 0.0,
        };
        let p = enu_transform(&sv, &origin);
        assert!((p[1] - 111_195.0).abs() < 1.0, "y = {}", p[1]);
        assert_eq!(p[2], 3000.0);
    }

    #[test]
    fn transform_is_antisymmetric() {
        let origin = AirportOrigin::new(50.0, 14.0);
        let mk = |lat: f64, lon: f64| StateVector {
            icao24: "x".into(),
            callsign: "X".into(),
            lat,
            lon,
            geo_altitude: 0.0,
            time: 0.0,
        };
        let plus = enu_transform(&mk(50.4, 14.7), &origin);
        let minus = enu_transform(&mk(49.6, 13.3), &origin);
        assert!((plus[0] + minus[0]).abs() < 1e-9);
        assert!((plus[1] + minus[1]).abs() < 1e-9);
    }

    #[test]
    fn bbox_is_closed() {
        let bbox = BoundingBox::default();
        assert!(bbox.contains([0.0, 0.0, 1000.0]));
        assert!(!bbox.contains([150_000.0, 0.0, 1000.0]));
        assert!(bbox.contains([100_000.0, -100_000.0, 20_000.0]));
        assert!(!bbox.contains([0.0, 0.0, -1.0]));
    }

    #[test]
    fn ring_of_planes_filters_per_axis() {
        let origin = AirportOrigin::new(0.0, 0.0);
        // synthetic ring at 99-101 km on the y axis (meters -> degrees)
        let states: Vec<StateVector> = (0..40)
            .map(|i| {
                let radius = 99_000.0 + (i as f64 / 39.0) * 2_000.0;
                let lat = radius / 6_371_000.0 * 180.0 / std::f64::consts::PI;
                StateVector {
                    icao24: format!("{i}"),
                    callsign: format!("P{i}"),
                    lat,
                    lon: 0.0,
                    geo_altitude: 1000.0,
                    time: 0.0,
                }
            })
            .collect();
        let kept = bbox_filter(&states, &origin, &BoundingBox::default());
        for plane in &kept {
            assert!(plane.y <= 100_000.0 + 1e-6);
        }
        let dropped = states.len() - kept.len();
        assert!(dropped > 0 && dropped < states.len());
    }

    #[test]
    fn dedupe_keeps_nearest_in_time() {
        let mk = |cs: &str, t: f64| PlaneState { callsign: cs.into(), x: t, y: 0.0, z: 0.0, time: t };
        let deduped =
            dedupe_nearest_in_time(vec![mk("A", 100.0), mk("B", 90.0), mk("A", 110.0)], 108.0);
        assert_eq!(deduped.len(), 2);
        assert_eq!(deduped[0].time, 110.0);
        assert_eq!(deduped[1].callsign, "B");
    }

    #[test]
    fn url_parameter_order_is_stable() {
        let bbox = DegreeBbox { lamin: 49.2, lomin: 12.8, lamax: 51.0, lomax: 15.7 };
        let url = states_url("https://example.test/api", Some(1700000000), Some(&bbox));
        assert_eq!(
            url,
            "https://example.test/api/states/all?lamin=49.2&lomin=12.8&lamax=51&lomax=15.7&time=1700000000"
        );
    }

    #[test]
    fn file_source_returns_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("states.json");
        std::fs::write(&path, DOC).unwrap();
        let got = fetch_states(&AdsbSource::File(path), None, None).unwrap();
        assert_eq!(got, DOC);
    }

    #[test]
    fn unreachable_endpoint_errors_after_attempts() {
        // closed local port: connection refused on every attempt
        let source = AdsbSource::Http { base_url: "http://127.0.0.1:9".into(), token: None };
        match fetch_states(&source, None, None) {
            Err(AdsbError::Fetch { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected fetch error, got {other:?}"),
        }
    }
}
