//! File formats.
//!
//! * Life vectors: CSV, one vector per line, no header (`#` comments allowed),
//!   or JSON `{"class_length": l, "vectors": [[..], ..]}`.
//! * Global rates: CSV with header `age,fertility,mortality[,count][,fertility_se]`,
//!   empty cell = missing; class length and rate basis from a sidecar
//!   `<file>.json` or from the caller.
//! * Curves, bands and extinction curves: plot-ready CSV.
//!
//! Numbers are written in Rust's shortest round-trip form, so output is
//! byte-stable and exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demography::DemographicCurves;
use crate::error::{Error, Result};
use crate::estimation::{GlobalRates, RateBasis, RateRow};
use crate::likelihood::{LifeVector, LifeVectorSample};
use crate::uncertainty::ConfidenceBand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Vectors,
    Rates,
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::structural(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Guesses the format of a text file from its first non-comment line.
pub fn detect_format(text: &str) -> Option<DataFormat> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'))?;
    if first.starts_with('{') {
        return Some(DataFormat::Vectors);
    }
    let head = first.split(',').next().unwrap_or("").trim().to_ascii_lowercase();
    if head == "age" {
        return Some(DataFormat::Rates);
    }
    if first.split(',').all(|c| c.trim().parse::<i64>().is_ok()) {
        return Some(DataFormat::Vectors);
    }
    None
}

#[derive(Serialize, Deserialize)]
struct VectorEnvelope {
    class_length: f64,
    vectors: Vec<Vec<i32>>,
}

pub fn parse_life_vectors(text: &str, class_length: f64) -> Result<LifeVectorSample> {
    if text.trim_start().starts_with('{') {
        let env: VectorEnvelope = serde_json::from_str(text)?;
        return LifeVectorSample::from_entries(env.vectors, env.class_length);
    }
    let mut vectors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let entries = body
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(|c| {
                c.parse::<i32>().map_err(|_| Error::Parse {
                    line,
                    message: format!("not an integer: '{c}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        vectors.push(LifeVector::new(entries).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?);
    }
    LifeVectorSample::new(vectors, class_length)
}

pub fn life_vectors_csv(sample: &LifeVectorSample) -> String {
    let mut out = String::new();
    for v in sample.vectors() {
        let row: Vec<String> = v.entries().iter().map(|e| e.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn life_vectors_json(sample: &LifeVectorSample) -> Result<String> {
    let env = VectorEnvelope {
        class_length: sample.class_length(),
        vectors: sample.vectors().iter().map(|v| v.entries().to_vec()).collect(),
    };
    Ok(serde_json::to_string(&env)?)
}

/// Sidecar metadata of a rates CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatesMeta {
    pub class_length: f64,
    pub basis: RateBasis,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Parses a rates CSV. Without an explicit class length it is taken from
/// the age column; without an explicit basis, classes longer than one year
/// are read as per-year rates.
pub fn parse_rates(text: &str, class_length: Option<f64>, basis: Option<RateBasis>) -> Result<GlobalRates> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(age_c), Some(fert_c), Some(mort_c)) = (col("age"), col("fertility"), col("mortality")) else {
        return Err(Error::Parse {
            line: 1,
            message: "rates header must contain age, fertility and mortality".into(),
        });
    };
    let count_c = col("count");
    let se_c = col("fertility_se");
    let mut ages = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |c: Option<usize>| -> Result<Option<f64>> {
            match c.and_then(|c| rec.get(c)) {
                None | Some("") => Ok(None),
                Some(s) => s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: '{s}'"),
                }),
            }
        };
        let age = cell(Some(age_c))?.ok_or_else(|| Error::Parse {
            line,
            message: "missing age".into(),
        })?;
        ages.push((line, age));
        rows.push(RateRow {
            fertility: cell(Some(fert_c))?,
            mortality: cell(Some(mort_c))?,
            count: cell(count_c)?,
            fertility_se: cell(se_c)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no rows".into(),
        });
    }
    let l = match class_length {
        Some(l) => l,
        None if ages.len() >= 2 => ages[1].1 - ages[0].1,
        None => 1.0,
    };
    for (x, (line, a)) in ages.iter().enumerate() {
        if (a - x as f64 * l).abs() > 1e-9 * (1.0 + a.abs()) {
            return Err(Error::Parse {
                line: *line,
                message: format!("age {a} is not class {x} of length {l}"),
            });
        }
    }
    let basis = basis.unwrap_or(if l > 1.0 { RateBasis::PerYear } else { RateBasis::PerClass });
    GlobalRates::new(l, basis, rows)
}

/// Reads a rates CSV with its optional sidecar; explicit arguments win.
pub fn read_rates(path: &Path, class_length: Option<f64>, basis: Option<RateBasis>) -> Result<GlobalRates> {
    let text = fs::read_to_string(path)?;
    let side = sidecar_path(path);
    let meta: Option<RatesMeta> = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(side)?)?)
    } else {
        None
    };
    parse_rates(
        &text,
        class_length.or(meta.map(|m| m.class_length)),
        basis.or(meta.map(|m| m.basis)),
    )
}

pub fn rates_csv(rates: &GlobalRates) -> String {
    let mut out = String::from("age,fertility,mortality,count,fertility_se\n");
    for (x, r) in rates.rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            num(x as f64 * rates.class_length),
            opt(r.fertility),
            opt(r.mortality),
            opt(r.count),
            opt(r.fertility_se)
        ));
    }
    out
}

/// Writes the CSV and its sidecar.
pub fn write_rates(path: &Path, rates: &GlobalRates) -> Result<()> {
    write_atomic(path, rates_csv(rates).as_bytes())?;
    let meta = RatesMeta {
        class_length: rates.class_length,
        basis: rates.basis,
    };
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn curves_csv(c: &DemographicCurves) -> String {
    let mut out = String::from("age,mortality,fertility,survival\n");
    for x in 0..c.ages.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            num(c.ages[x]),
            num(c.mortality[x]),
            num(c.fertility[x]),
            num(c.survival[x])
        ));
    }
    out
}

pub fn band_csv(b: &ConfidenceBand) -> String {
    let mut out = String::from("age,estimate,lower,upper\n");
    for x in 0..b.ages.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            num(b.ages[x]),
            num(b.estimate[x]),
            num(b.lower[x]),
            num(b.upper[x])
        ));
    }
    out
}

pub fn extinction_csv(ages: &[f64], q: &[f64]) -> String {
    let mut out = String::from("age,extinction_probability\n");
    for (a, v) in ages.iter().zip(q) {
        out.push_str(&format!("{},{}\n", num(*a), num(*v)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_round_trip() {
        let s = LifeVectorSample::from_entries(vec![vec![2, 3, 1, -1], vec![0, -2], vec![-2]], 1.0).unwrap();
        let text = life_vectors_csv(&s);
        assert_eq!(text, "2,3,1,-1\n0,-2\n-2\n");
        assert_eq!(detect_format(&text), Some(DataFormat::Vectors));
        assert_eq!(parse_life_vectors(&text, 1.0).unwrap(), s);
        let json = life_vectors_json(&s).unwrap();
        assert_eq!(parse_life_vectors(&json, 9.0).unwrap(), s);
    }

    #[test]
    fn vector_parse_errors_carry_lines() {
        let err = parse_life_vectors("1,2\n# note\n1,x\n", 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_life_vectors("1,-1,2\n", 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn rates_round_trip() {
        let text = "age,fertility,mortality,count\n0,1.5,0.1,20\n5,,0.2,\n10,0.5,,3\n";
        assert_eq!(detect_format(text), Some(DataFormat::Rates));
        let r = parse_rates(text, None, None).unwrap();
        assert_eq!(r.class_length, 5.0);
        assert_eq!(r.basis, RateBasis::PerYear);
        assert_eq!(r.rows[1].fertility, None);
        assert_eq!(r.rows[2].count, Some(3.0));
        let again = parse_rates(&rates_csv(&r), Some(5.0), Some(RateBasis::PerYear)).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn rates_errors() {
        assert!(matches!(parse_rates("age,fertility\n0,1\n", None, None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_rates("age,fertility,mortality\n0,1,0.1\n2,1,0.1\n3,1,0.2\n", None, None),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(parse_rates("age,fertility,mortality\n0,1,1.5\n", None, None).is_err());
    }

    #[test]
    fn atomic_write_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/rates.csv");
        let r = parse_rates("age,fertility,mortality\n0,1,0.1\n1,2,0.2\n", None, None).unwrap();
        write_rates(&p, &r).unwrap();
        assert_eq!(read_rates(&p, None, None).unwrap(), r);
        assert!(!dir.path().join("sub/.rates.csv.tmp").exists());
    }
}
