//! Report tables and their files. Every table is derived from the event log,
//! so a saved `events.jsonl` is enough to rebuild the outputs of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::domain::{TaskId, UavId};
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::harness::efficiency_from_vectors;

pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidValue(format!("unknown format {other:?}"))),
        }
    }
}

/// `x` with 9 significant digits, trailing zeros dropped. Plain notation for
/// exponents in `-5..9`, scientific otherwise.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// JSON-safe number: non-finite values become `null`.
fn json_number(x: f64) -> String {
    if x.is_finite() {
        format_float(x)
    } else {
        "null".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditRow {
    pub round: u64,
    pub uav_id: UavId,
    pub credit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proposed,
    Baseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyRow {
    pub round: u64,
    pub task_id: TaskId,
    pub method: Method,
    pub ef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrTableRow {
    pub round: u64,
    /// Member ids in relay order joined by `-`.
    pub coalition: String,
    pub snr: f64,
    pub t_up: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tables {
    pub credits: Vec<CreditRow>,
    pub efficiency: Vec<EfficiencyRow>,
    pub snr: Vec<SnrTableRow>,
}

fn join_ids(ids: &[UavId]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
}

impl Tables {
    /// Credits after every round, efficiency of served (proposed) and
    /// covered (baseline) tasks, and the SNR of each formed coalition.
    pub fn from_events(log: &EventLog) -> Result<Self> {
        let mut t = Tables::default();
        for e in log.events() {
            match e {
                Event::Credits { round, credits } => {
                    t.credits.extend(credits.iter().map(|c| CreditRow {
                        round: *round,
                        uav_id: c.uav,
                        credit: c.credit,
                    }));
                }
                Event::Formed {
                    round,
                    task,
                    members,
                    aggregate,
                    required,
                    snr,
                    t_up,
                    iterations,
                    ..
                } => {
                    t.efficiency.push(EfficiencyRow {
                        round: *round,
                        task_id: *task,
                        method: Method::Proposed,
                        ef: efficiency_from_vectors(aggregate, required)?,
                    });
                    t.snr.push(SnrTableRow {
                        round: *round,
                        coalition: join_ids(members),
                        snr: *snr,
                        t_up: *t_up,
                        iterations: *iterations,
                    });
                }
                Event::Baseline {
                    round,
                    task,
                    aggregate,
                    required,
                    covered: true,
                    ..
                } => t.efficiency.push(EfficiencyRow {
                    round: *round,
                    task_id: *task,
                    method: Method::Baseline,
                    ef: efficiency_from_vectors(aggregate, required)?,
                }),
                _ => {}
            }
        }
        Ok(t)
    }

    pub fn mean_efficiency(&self, method: Method) -> Option<f64> {
        let v: Vec<f64> = self
            .efficiency
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.ef)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn credits_text(&self, format: Format) -> String {
        let mut s = String::new();
        if format == Format::Csv {
            s.push_str("round,uav_id,credit\n");
        }
        for r in &self.credits {
            match format {
                Format::Csv => writeln!(s, "{},{},{}", r.round, r.uav_id, format_float(r.credit)),
                Format::Jsonl => writeln!(
                    s,
                    r#"{{"round":{},"uav_id":{},"credit":{}}}"#,
                    r.round,
                    r.uav_id,
                    json_number(r.credit)
                ),
            }
            .expect("write to string");
        }
        s
    }

    pub fn efficiency_text(&self, format: Format) -> String {
        let mut s = String::new();
        if format == Format::Csv {
            s.push_str("round,task_id,method,ef\n");
        }
        for r in &self.efficiency {
            match format {
                Format::Csv => writeln!(
                    s,
                    "{},{},{},{}",
                    r.round,
                    r.task_id,
                    r.method.as_str(),
                    format_float(r.ef)
                ),
                Format::Jsonl => writeln!(
                    s,
                    r#"{{"round":{},"task_id":{},"method":"{}","ef":{}}}"#,
                    r.round,
                    r.task_id,
                    r.method.as_str(),
                    json_number(r.ef)
                ),
            }
            .expect("write to string");
        }
        s
    }

    pub fn snr_text(&self, format: Format) -> String {
        let mut s = String::new();
        if format == Format::Csv {
            s.push_str("round,coalition,snr,t_up,iterations\n");
        }
        for r in &self.snr {
            match format {
                Format::Csv => writeln!(
                    s,
                    "{},{},{},{},{}",
                    r.round,
                    r.coalition,
                    format_float(r.snr),
                    format_float(r.t_up),
                    r.iterations
                ),
                Format::Jsonl => writeln!(
                    s,
                    r#"{{"round":{},"coalition":"{}","snr":{},"t_up":{},"iterations":{}}}"#,
                    r.round,
                    r.coalition,
                    json_number(r.snr),
                    json_number(r.t_up),
                    r.iterations
                ),
            }
            .expect("write to string");
        }
        s
    }

    /// Write `credits`, `efficiency` and `snr` files into `dir`.
    pub fn write(&self, dir: &Path, format: Format) -> Result<()> {
        fs::create_dir_all(dir)?;
        let ext = format.extension();
        fs::write(dir.join(format!("credits.{ext}")), self.credits_text(format))?;
        fs::write(dir.join(format!("efficiency.{ext}")), self.efficiency_text(format))?;
        fs::write(dir.join(format!("snr.{ext}")), self.snr_text(format))?;
        Ok(())
    }
}

/// Write the event trace and the tables derived from it.
pub fn write_outputs(dir: &Path, log: &EventLog, format: Format) -> Result<Tables> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    fs::write(dir.join(EVENTS_FILE), buf)?;
    let tables = Tables::from_events(log)?;
    tables.write(dir, format)?;
    Ok(tables)
}

/// Rebuild tables from a saved event trace.
pub fn read_events(path: &Path) -> Result<EventLog> {
    EventLog::read_jsonl(std::io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_simulation;
    use crate::scenario::ScenarioConfig;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(2.0 / 3.0), "0.666666667");
        assert_eq!(format_float(-1234.5678912345), "-1234.56789");
        assert_eq!(format_float(9.9999999999), "10");
        assert_eq!(format_float(123456789.4), "123456789");
        assert_eq!(format_float(1234567891.0), "1.23456789e9");
        assert_eq!(format_float(1.5e-7), "1.5e-7");
        assert_eq!(format_float(0.000012345), "0.000012345");
        assert_eq!(format_float(f64::INFINITY), "inf");
        for x in [0.1, 1.0 / 7.0, 12345.678, 6.02e23, 1e-300] {
            let back: f64 = format_float(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("jsonl".parse::<Format>().unwrap(), Format::Jsonl);
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn tables_match_reports_and_round_trip() {
        let sim = run_simulation(&ScenarioConfig::default(), 3).unwrap();
        let tables = Tables::from_events(&sim.events).unwrap();
        assert_eq!(tables.credits.len(), 3 * 8);
        let proposed: Vec<f64> = sim
            .reports
            .iter()
            .flat_map(|r| r.efficiency.values().copied())
            .collect();
        let from_log: Vec<f64> = tables
            .efficiency
            .iter()
            .filter(|r| r.method == Method::Proposed)
            .map(|r| r.ef)
            .collect();
        assert_eq!(proposed, from_log);

        let dir = tempfile::tempdir().unwrap();
        let written = write_outputs(dir.path(), &sim.events, Format::Csv).unwrap();
        let reread = read_events(&dir.path().join(EVENTS_FILE)).unwrap();
        assert_eq!(reread, sim.events);
        assert_eq!(Tables::from_events(&reread).unwrap(), written);

        let csv = fs::read_to_string(dir.path().join("credits.csv")).unwrap();
        assert!(csv.starts_with("round,uav_id,credit\n1,1,"));
        let snr = fs::read_to_string(dir.path().join("snr.csv")).unwrap();
        assert!(snr.starts_with("round,coalition,snr,t_up,iterations\n"));

        written.write(dir.path(), Format::Jsonl).unwrap();
        let eff = fs::read_to_string(dir.path().join("efficiency.jsonl")).unwrap();
        for line in eff.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["ef"].as_f64().unwrap() >= 1.0);
        }
    }
}
