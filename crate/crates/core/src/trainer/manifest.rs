//! Run manifest: per-step loss records plus the direction bookkeeping.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    /// "MLM" | "MD" | "MB" | "SKD" | "LBKD"
    pub kind: String,
    /// "src-tgt" language codes.
    pub pair: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    /// "mlm" | "sm" | "lbunmt" | "munmt" | "ft"
    pub run_kind: String,
    pub records: Vec<LossRecord>,
    pub trained_directions: Vec<(String, String)>,
    pub untrained_directions: Vec<(String, String)>,
    pub final_step: usize,
    pub skipped_pairs: usize,
    pub checkpoints: Vec<String>,
}

impl RunManifest {
    pub fn new(run_kind: &str, languages: &[String]) -> RunManifest {
        let mut trained = Vec::new();
        let mut untrained = Vec::new();
        for (i, a) in languages.iter().enumerate() {
            for (j, b) in languages.iter().enumerate() {
                if i == j {
                    continue;
                }
                if i == 0 || j == 0 {
                    trained.push((a.clone(), b.clone()));
                } else {
                    untrained.push((a.clone(), b.clone()));
                }
            }
        }
        if run_kind == "mlm" {
            trained.clear();
            untrained.clear();
        }
        RunManifest {
            run_kind: run_kind.to_string(),
            trained_directions: trained,
            untrained_directions: untrained,
            ..RunManifest::default()
        }
    }

    pub fn record(&mut self, step: usize, kind: &str, pair: String, value: f64) {
        self.records.push(LossRecord { step, kind: kind.to_string(), pair, value });
    }

    pub fn records_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a LossRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// `step<TAB>kind<TAB>pair<TAB>value` lines followed by a summary block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.step, r.kind, r.pair, r.value);
        }
        let dirs = |v: &[(String, String)]| {
            v.iter().map(|(a, b)| format!("{a}->{b}")).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(out, "# run_kind = {}", self.run_kind);
        let _ = writeln!(out, "# final_step = {}", self.final_step);
        let _ = writeln!(out, "# trained_directions = {}", dirs(&self.trained_directions));
        let _ = writeln!(out, "# untrained_directions = {}", dirs(&self.untrained_directions));
        let _ = writeln!(out, "# skipped_pairs = {}", self.skipped_pairs);
        let _ = writeln!(out, "# checkpoints = {}", self.checkpoints.join(","));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunManifest> {
        let mut m = RunManifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Train(format!("manifest summary line {}", i + 1)))?;
                let (k, v) = (k.trim(), v.trim());
                let parse_dirs = |v: &str| -> Vec<(String, String)> {
                    v.split(',')
                        .filter(|s| !s.is_empty())
                        .filter_map(|d| {
                            d.split_once("->").map(|(a, b)| (a.to_string(), b.to_string()))
                        })
                        .collect()
                };
                match k {
                    "run_kind" => m.run_kind = v.to_string(),
                    "final_step" => {
                        m.final_step = v
                            .parse()
                            .map_err(|_| Error::Train(format!("bad final_step `{v}`")))?;
                    }
                    "trained_directions" => m.trained_directions = parse_dirs(v),
                    "untrained_directions" => m.untrained_directions = parse_dirs(v),
                    "skipped_pairs" => m.skipped_pairs = v.parse().unwrap_or(0),
                    "checkpoints" => {
                        m.checkpoints =
                            v.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
                    }
                    _ => {}
                }
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::Train(format!("manifest line {} malformed: `{line}`", i + 1)));
            }
            m.records.push(LossRecord {
                step: parts[0]
                    .parse()
                    .map_err(|_| Error::Train(format!("manifest line {}: bad step", i + 1)))?,
                kind: parts[1].to_string(),
                pair: parts[2].to_string(),
                value: parts[3]
                    .parse()
                    .map_err(|_| Error::Train(format!("manifest line {}: bad value", i + 1)))?,
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs(n: usize) -> Vec<String> {
        (0..n).map(|i| if i == 0 { "base".to_string() } else { format!("c{i}") }).collect()
    }

    #[test]
    fn direction_counts_match_formulae() {
        for n in [2usize, 4, 13] {
            let m = RunManifest::new("munmt", &langs(n));
            assert_eq!(m.trained_directions.len(), 2 * (n - 1));
            assert_eq!(
                m.trained_directions.len() + m.untrained_directions.len(),
                n * (n - 1)
            );
        }
        // The thirteen-language setting of the full experiment.
        let m13 = RunManifest::new("munmt", &langs(13));
        assert_eq!(m13.trained_directions.len(), 24);
        assert_eq!(m13.trained_directions.len() + m13.untrained_directions.len(), 156);
    }

    #[test]
    fn text_roundtrip_including_nan() {
        let mut m = RunManifest::new("sm", &langs(2));
        m.record(1, "MD", "base-base".into(), 3.75);
        m.record(1, "MB", "c1-base".into(), f64::NAN);
        m.final_step = 1;
        m.checkpoints.push("model.mukd".into());
        let text = m.to_text();
        let back = RunManifest::parse(&text).unwrap();
        assert_eq!(back.run_kind, "sm");
        assert_eq!(back.records.len(), 2);
        assert!(back.records[1].value.is_nan());
        assert_eq!(back.trained_directions, m.trained_directions);
        assert_eq!(back.checkpoints, m.checkpoints);
    }
}
