//! JSON-lines persistence: one header record, then one record per sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, NoiseSpec, PoseSample};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "chaincal-dataset";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    model_hash: String,
    seed: u64,
    noise: NoiseSpec,
    count: usize,
}

pub fn to_jsonl(dataset: &Dataset) -> Result<String> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: DATASET_FORMAT_VERSION,
        model_hash: dataset.model_hash.clone(),
        seed: dataset.seed,
        noise: dataset.noise,
        count: dataset.samples.len(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for s in &dataset.samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty dataset file".into(),
    })?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != u64::from(DATASET_FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: v as u32,
                supported: DATASET_FORMAT_VERSION,
            });
        }
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Parse {
        line: 1,
        message: format!("header: {e}"),
    })?;
    if header.format != FORMAT_TAG {
        return Err(Error::Parse {
            line: 1,
            message: format!("not a dataset file (format `{}`)", header.format),
        });
    }
    let mut samples = Vec::with_capacity(header.count);
    for (i, line) in lines {
        let sample: PoseSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("sample {}: {e}", samples.len()),
        })?;
        sample
            .validate()
            .map_err(|message| Error::Parse { line: i + 1, message })?;
        samples.push(sample);
    }
    if samples.len() != header.count {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("header announces {} samples, found {}", header.count, samples.len()),
        });
    }
    Ok(Dataset {
        model_hash: header.model_hash,
        seed: header.seed,
        noise: header.noise,
        samples,
    })
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::PixelPoint;
    use crate::dataset::PixelObservation;
    use crate::kinematics::{Arm, Eye};

    fn dataset() -> Dataset {
        Dataset {
            model_hash: "abc".into(),
            seed: 17,
            noise: NoiseSpec::new(5.0, 2.5),
            samples: vec![PoseSample {
                target: [0.1, -1.0 / 3.0, 2e-17],
                theta: (0..20).map(|i| (i as f64).sqrt() * 0.1).collect(),
                la_position: [1.0 / 7.0, 2.0, 3.0],
                ra_position: [1.0 / 7.0 + 1e-9, 2.0, 3.0],
                contact_noise: [std::f64::consts::PI, -0.0, 5e-300],
                observations: vec![PixelObservation {
                    arm: Arm::Right,
                    eye: Eye::Left,
                    visible: true,
                    pixel: Some(PixelPoint::new(160.123456789012, 0.1 + 0.2)),
                }],
            }],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = dataset();
        let back = parse(&to_jsonl(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        for (a, b) in back.samples[0].theta.iter().zip(&d.samples[0].theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save(&d, &p).unwrap();
        assert_eq!(load(&p).unwrap(), d);
    }

    #[test]
    fn wrong_theta_length_is_a_parse_error() {
        let text = to_jsonl(&dataset()).unwrap().replace("\"theta\":[0.0,", "\"theta\":[");
        match parse(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("19"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = to_jsonl(&dataset())
            .unwrap()
            .replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            parse(&text),
            Err(Error::UnsupportedVersion { found: 7, supported: 1 })
        ));
    }

    #[test]
    fn malformed_record_reports_line() {
        let mut text = to_jsonl(&dataset()).unwrap();
        text.push_str("{not json\n");
        assert!(matches!(parse(&text), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse(""), Err(Error::Parse { line: 1, .. })));
    }
}
