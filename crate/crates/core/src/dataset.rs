//! CSV ingestion, numerical differentiation, phase segmentation and
//! trajectory-level splitting.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{Dataset, InvariantError, Phase, Sample, Trajectory, DEFAULT_SAMPLE_RATE_HZ};

/// |v̇| below this (mm³/s) continues the current phase instead of flipping it.
pub const PHASE_BAND: f64 = 1.0;

/// Window length of the smoothed differentiator.
pub const DIFF_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing required column `{0}`")]
    Schema(String),
    #[error("row {row}: {source}")]
    Invariant {
        row: usize,
        #[source]
        source: InvariantError,
    },
    #[error(transparent)]
    Structure(#[from] InvariantError),
    #[error("trajectory too short to differentiate: {len} samples (need at least {DIFF_WINDOW})")]
    TooShort { len: usize },
    #[error("need at least 2 trajectories to split, got {0}")]
    InsufficientTrajectories(usize),
    #[error("split ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
}

/// Where v̇ used for fitting comes from when the file carries it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VdotSource {
    /// Take `vdot`/`vddot` from the file when present.
    #[default]
    File,
    /// Always recompute from `v` with the smoothed differentiator.
    Differentiate,
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub columns: Vec<String>,
    pub has_vdot: bool,
    pub has_vddot: bool,
}

impl CsvSchema {
    pub const REQUIRED: [&'static str; 3] = ["t", "v", "p"];

    /// `t,v,vdot,vddot,p`.
    pub fn canonical() -> Self {
        Self::from_columns(["t", "v", "vdot", "vddot", "p"]).expect("canonical schema")
    }

    pub fn from_columns<I, S>(columns: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let columns: Vec<String> = columns.into_iter().map(|c| c.as_ref().trim().to_string()).collect();
        for req in Self::REQUIRED {
            if !columns.iter().any(|c| c == req) {
                return Err(DatasetError::Schema(req.to_string()));
            }
        }
        let has = |name: &str| columns.iter().any(|c| c == name);
        Ok(Self {
            has_vdot: has("vdot"),
            has_vddot: has("vddot"),
            columns,
        })
    }

    /// Reads only the header row of `path`.
    pub fn detect(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let mut rdr = csv_reader(std::fs::File::open(path)?);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        Self::from_columns(headers.iter())
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn csv_err(e: csv::Error) -> DatasetError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DatasetError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Loads a dataset, taking derivative columns from the file when present.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DatasetError> {
    load_csv_with(path, schema, VdotSource::File)
}

pub fn load_csv_with(path: impl AsRef<Path>, schema: &CsvSchema, source: VdotSource) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, source)
}

/// Parses CSV from any reader. Rows may carry an integer `cycle` column, in
/// which case consecutive rows with the same id form one trajectory;
/// otherwise the whole file is one trajectory.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, source: VdotSource) -> Result<Dataset, DatasetError> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    for col in &schema.columns {
        if find(col).is_none() {
            return Err(DatasetError::Schema(col.clone()));
        }
    }
    for req in CsvSchema::REQUIRED {
        if find(req).is_none() {
            return Err(DatasetError::Schema(req.to_string()));
        }
    }
    let idx_t = find("t").unwrap();
    let idx_v = find("v").unwrap();
    let idx_p = find("p").unwrap();
    let idx_vdot = if schema.has_vdot { find("vdot") } else { None };
    let idx_vddot = if schema.has_vddot { find("vddot") } else { None };
    let idx_cycle = find("cycle");

    let mut rows: Vec<(u32, Sample)> = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = i + 1;
        let num = |idx: usize, name: &str| -> Result<f64, DatasetError> {
            let raw = rec.get(idx).ok_or_else(|| DatasetError::Parse {
                line,
                message: format!("missing field `{name}`"),
            })?;
            raw.parse::<f64>().map_err(|e| DatasetError::Parse {
                line,
                message: format!("field `{name}`: {e} ({raw:?})"),
            })
        };
        let t = num(idx_t, "t")?;
        let v = num(idx_v, "v")?;
        let p = num(idx_p, "p")?;
        let v_dot = match idx_vdot {
            Some(i) => num(i, "vdot")?,
            None => 0.0,
        };
        let v_ddot = match idx_vddot {
            Some(i) => num(i, "vddot")?,
            None => 0.0,
        };
        let cycle = match idx_cycle {
            Some(i) => {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<u32>().map_err(|e| DatasetError::Parse {
                    line,
                    message: format!("field `cycle`: {e} ({raw:?})"),
                })?
            }
            None => 0,
        };
        if let Some(prev) = prev_t {
            if t <= prev {
                return Err(DatasetError::Invariant {
                    row,
                    source: InvariantError::NonMonotoneTime { index: i, t, prev },
                });
            }
        }
        prev_t = Some(t);
        let s = Sample::new(t, v, v_dot, v_ddot, p);
        for (field, x) in [("t", t), ("v", v), ("vdot", v_dot), ("vddot", v_ddot), ("p", p)] {
            if !x.is_finite() {
                return Err(DatasetError::Invariant {
                    row,
                    source: InvariantError::NonFinite { index: i, field },
                });
            }
        }
        if v < 0.0 {
            return Err(DatasetError::Invariant {
                row,
                source: InvariantError::NegativeVolume { index: i, value: v },
            });
        }
        rows.push((cycle, s));
    }
    if rows.is_empty() {
        return Err(InvariantError::EmptyDataset.into());
    }

    let mut groups: Vec<(u32, Vec<Sample>)> = Vec::new();
    for (cycle, s) in rows {
        match groups.last_mut() {
            Some((c, v)) if *c == cycle => v.push(s),
            _ => groups.push((cycle, vec![s])),
        }
    }
    let rate = estimate_sample_rate(&groups);

    let need_diff = source == VdotSource::Differentiate || !schema.has_vdot || !schema.has_vddot;
    let mut trajectories = Vec::with_capacity(groups.len());
    for (cycle, samples) in groups {
        let traj = Trajectory::new(samples, rate, cycle, Phase::Mixed)?;
        let traj = if need_diff {
            let d = differentiate(&traj)?;
            if source == VdotSource::File && schema.has_vdot {
                // keep the file's v̇, fill only v̈
                let merged = traj
                    .samples()
                    .iter()
                    .zip(d.samples())
                    .map(|(orig, diff)| Sample {
                        v_ddot: diff.v_ddot,
                        ..*orig
                    })
                    .collect();
                traj.with_samples(merged)?
            } else {
                d
            }
        } else {
            traj
        };
        trajectories.push(traj);
    }
    Ok(Dataset::new(trajectories, 0, BTreeMap::new())?)
}

/// Median sampling interval across all groups, inverted.
fn estimate_sample_rate(groups: &[(u32, Vec<Sample>)]) -> f64 {
    let mut dts: Vec<f64> = groups
        .iter()
        .flat_map(|(_, s)| s.windows(2).map(|w| w[1].t - w[0].t))
        .collect();
    if dts.is_empty() {
        return DEFAULT_SAMPLE_RATE_HZ;
    }
    dts.sort_by(f64::total_cmp);
    1.0 / dts[dts.len() / 2]
}

/// Writes the canonical `t,v,vdot,vddot,p,cycle` layout. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let io = |e: csv::Error| DatasetError::Io(std::io::Error::other(e));
    wtr.write_record(["t", "v", "vdot", "vddot", "p", "cycle"])
        .map_err(io)?;
    for traj in ds.trajectories() {
        let cycle = traj.cycle_id().to_string();
        for s in traj.samples() {
            wtr.write_record([
                s.t.to_string(),
                s.v.to_string(),
                s.v_dot.to_string(),
                s.v_ddot.to_string(),
                s.p.to_string(),
                cycle.clone(),
            ])
            .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Least-squares quadratic fit over a 5-sample window centred at offset 0,
/// evaluated at `s` (in samples). Returns (first, second) derivative weights.
fn quadratic_weights(s: f64) -> ([f64; 5], [f64; 5]) {
    // slope a1 = Σ x·y / 10, curvature a2 = Σ (x² − 2)·y / 14
    let mut d1 = [0.0; 5];
    let mut d2 = [0.0; 5];
    for (k, x) in (-2..=2).enumerate() {
        let x = x as f64;
        let a1 = x / 10.0;
        let a2 = (x * x - 2.0) / 14.0;
        d1[k] = a1 + 2.0 * a2 * s;
        d2[k] = 2.0 * a2;
    }
    (d1, d2)
}

/// Fills v̇ and v̈ from v with a 5-point Savitzky-Golay (quadratic) stencil.
/// The two samples at each end use the same quadratic fit evaluated off
/// centre, so polynomials up to degree two are differentiated exactly.
pub fn differentiate(traj: &Trajectory) -> Result<Trajectory, DatasetError> {
    let n = traj.len();
    if n < DIFF_WINDOW {
        return Err(DatasetError::TooShort { len: n });
    }
    let s = traj.samples();
    let h = traj.duration() / (n - 1) as f64;
    let mut out = s.to_vec();
    for (i, sample) in out.iter_mut().enumerate() {
        let (centre, offset) = if i < 2 {
            (2, i as f64 - 2.0)
        } else if i + 2 >= n {
            (n - 3, (i + 3 - n) as f64)
        } else {
            (i, 0.0)
        };
        let (w1, w2) = quadratic_weights(offset);
        let window = &s[centre - 2..=centre + 2];
        // centring on the middle sample keeps constants exactly flat
        let mid = window[2].v;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (k, ws) in window.iter().enumerate() {
            d1 += w1[k] * (ws.v - mid);
            d2 += w2[k] * (ws.v - mid);
        }
        sample.v_dot = d1 / h;
        sample.v_ddot = d2 / (h * h);
    }
    Ok(traj.with_samples(out)?)
}

fn phase_of(v_dot: f64) -> Option<Phase> {
    if v_dot >= PHASE_BAND {
        Some(Phase::Inflation)
    } else if v_dot <= -PHASE_BAND {
        Some(Phase::Deflation)
    } else {
        None
    }
}

/// Splits a trajectory where v̇ changes sign. Samples with |v̇| inside the
/// hysteresis band stay with the preceding segment; samples before the
/// first out-of-band sample join the first segment. A trajectory that
/// never leaves the band comes back as one `Mixed` segment.
pub fn segment_cycles(traj: &Trajectory) -> Vec<Trajectory> {
    let mut segments: Vec<(Phase, Vec<Sample>)> = Vec::new();
    let mut pending: Vec<Sample> = Vec::new();
    for s in traj.samples() {
        match (phase_of(s.v_dot), segments.last_mut()) {
            (Some(ph), Some((cur, buf))) if *cur == ph => buf.push(*s),
            (Some(ph), _) => {
                let mut buf = std::mem::take(&mut pending);
                buf.push(*s);
                segments.push((ph, buf));
            }
            (None, Some((_, buf))) => buf.push(*s),
            (None, None) => pending.push(*s),
        }
    }
    if segments.is_empty() {
        return vec![traj.with_phase(Phase::Mixed)];
    }
    segments
        .into_iter()
        .map(|(phase, samples)| {
            Trajectory::new(samples, traj.sample_rate_hz(), traj.cycle_id(), phase)
                .expect("subsequence of a valid trajectory is valid")
        })
        .collect()
}

/// Segments every trajectory of a dataset.
pub fn segment_dataset(ds: &Dataset) -> Dataset {
    let trajectories = ds.trajectories().iter().flat_map(segment_cycles).collect();
    ds.with_trajectories(trajectories).expect("segments of a valid dataset")
}

/// Splits whole trajectories into (first, second) with
/// `floor(ratio · n)` trajectories in the first part, clamped to `1..n-1`.
/// Each part keeps the original trajectory order.
pub fn split(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let n = ds.trajectories().len();
    if n < 2 {
        return Err(DatasetError::InsufficientTrajectories(n));
    }
    let n_first = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut first: Vec<usize> = idx[..n_first].to_vec();
    let mut second: Vec<usize> = idx[n_first..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    let pick = |ids: &[usize]| ids.iter().map(|&i| ds.trajectories()[i].clone()).collect::<Vec<_>>();
    Ok((
        ds.with_trajectories(pick(&first))?,
        ds.with_trajectories(pick(&second))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn traj_from(v: impl Fn(f64) -> f64, n: usize) -> Trajectory {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 25.0;
                Sample::new(t, v(t), 0.0, 0.0, 0.0)
            })
            .collect();
        Trajectory::new(samples, 25.0, 0, Phase::Mixed).unwrap()
    }

    fn with_vdot(vdots: &[f64]) -> Trajectory {
        let samples = vdots
            .iter()
            .enumerate()
            .map(|(i, &vd)| Sample::new(i as f64 / 25.0, 10.0, vd, 0.0, 0.0))
            .collect();
        Trajectory::new(samples, 25.0, 3, Phase::Mixed).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "t,v,vdot,vddot,p\n0,0,10,0,1\n0.04,0.4,10,0,1.1\n0.08,0.8,10,0,1.2\n";
        let ds = read_csv(Cursor::new(csv), &CsvSchema::canonical(), VdotSource::File).unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.trajectories().len(), 1);
        assert_eq!(ds.samples().nth(2).unwrap().p, 1.2);
        assert!((ds.trajectories()[0].sample_rate_hz() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn columns_in_any_order_and_crlf() {
        let csv = "p,t,v,vddot,vdot\r\n1,0,0,0,10\r\n1.1,0.04,0.4,0,10\r\n";
        let schema = CsvSchema::from_columns(["t", "v", "p", "vdot", "vddot"]).unwrap();
        let ds = read_csv(Cursor::new(csv), &schema, VdotSource::File).unwrap();
        let s = ds.samples().nth(1).unwrap();
        assert_eq!((s.t, s.v, s.v_dot, s.p), (0.04, 0.4, 10.0, 1.1));
    }

    #[test]
    fn missing_p_column() {
        assert!(matches!(
            CsvSchema::from_columns(["t", "v"]),
            Err(DatasetError::Schema(c)) if c == "p"
        ));
        let csv = "t,v\n0,0\n";
        let schema = CsvSchema {
            columns: vec!["t".into(), "v".into()],
            has_vdot: false,
            has_vddot: false,
        };
        assert!(matches!(
            read_csv(Cursor::new(csv), &schema, VdotSource::File),
            Err(DatasetError::Schema(c)) if c == "p"
        ));
    }

    #[test]
    fn decreasing_time_names_the_row() {
        let mut csv = String::from("t,v,vdot,vddot,p\n");
        for row in 1..=10 {
            let t = if row == 7 { 0.0 } else { row as f64 * 0.04 };
            csv.push_str(&format!("{t},1,0,0,0\n"));
        }
        let err = read_csv(Cursor::new(csv), &CsvSchema::canonical(), VdotSource::File).unwrap_err();
        assert!(matches!(err, DatasetError::Invariant { row: 7, .. }), "{err}");
        assert!(err.to_string().starts_with("row 7"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "t,v,vdot,vddot,p\n0,0,0,0,0\n0.04,abc,0,0,0\n";
        let err = read_csv(Cursor::new(csv), &CsvSchema::canonical(), VdotSource::File).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_vdot_is_differentiated() {
        let mut csv = String::from("t,v,p\n");
        for i in 0..10 {
            let t = i as f64 / 25.0;
            csv.push_str(&format!("{t},{},0\n", 50.0 * t));
        }
        let schema = CsvSchema::from_columns(["t", "v", "p"]).unwrap();
        let ds = read_csv(Cursor::new(csv), &schema, VdotSource::File).unwrap();
        for s in ds.samples() {
            assert!((s.v_dot - 50.0).abs() < 1e-9);
            assert!(s.v_ddot.abs() < 1e-6);
        }
    }

    #[test]
    fn cycle_column_groups_trajectories() {
        let mut csv = String::from("t,v,vdot,vddot,p,cycle\n");
        for i in 0..12 {
            csv.push_str(&format!("{},1,0,0,0,{}\n", i as f64 / 25.0, i / 6));
        }
        let ds = read_csv(Cursor::new(csv), &CsvSchema::canonical(), VdotSource::File).unwrap();
        assert_eq!(ds.trajectories().len(), 2);
        assert_eq!(ds.trajectories()[1].cycle_id(), 1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let traj = traj_from(|t| 3.0 + (t * 1.7).sin() * 100.0 + 1e-7, 30);
        let traj = differentiate(&traj).unwrap();
        let ds = Dataset::new(vec![traj], 0, BTreeMap::new()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(Cursor::new(buf), &CsvSchema::canonical(), VdotSource::File).unwrap();
        let a: Vec<_> = ds.samples().collect();
        let b: Vec<_> = back.samples().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_ramp_derivative() {
        let d = differentiate(&traj_from(|t| 100.0 * t, 40)).unwrap();
        for s in d.samples() {
            assert!((s.v_dot - 100.0).abs() < 1e-9, "{}", s.v_dot);
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let d = differentiate(&traj_from(|_| 42.0, 12)).unwrap();
        for s in d.samples() {
            assert_eq!(s.v_dot, 0.0);
            assert_eq!(s.v_ddot, 0.0);
        }
    }

    #[test]
    fn quadratic_second_derivative() {
        // v = t², v̈ = 2 everywhere, v̇ = 2t
        let d = differentiate(&traj_from(|t| t * t, 50)).unwrap();
        for s in d.samples() {
            assert!((s.v_ddot - 2.0).abs() < 1e-6, "{}", s.v_ddot);
            assert!((s.v_dot - 2.0 * s.t).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            differentiate(&traj_from(|t| t, 4)),
            Err(DatasetError::TooShort { len: 4 })
        ));
    }

    #[test]
    fn triangle_wave_segments() {
        // 3 periods of 20 samples: 10 up, 10 down
        let vd: Vec<f64> = (0..60).map(|i| if (i / 10) % 2 == 0 { 30.0 } else { -30.0 }).collect();
        let segs = segment_cycles(&with_vdot(&vd));
        assert_eq!(segs.len(), 6);
        for (k, s) in segs.iter().enumerate() {
            let expect = if k % 2 == 0 { Phase::Inflation } else { Phase::Deflation };
            assert_eq!(s.phase(), expect);
            assert_eq!(s.len(), 10);
            assert_eq!(s.cycle_id(), 3);
        }
    }

    #[test]
    fn monotone_ramp_is_one_inflation() {
        let segs = segment_cycles(&with_vdot(&[5.0; 8]));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].phase(), Phase::Inflation);
    }

    #[test]
    fn all_dwell_is_mixed() {
        let segs = segment_cycles(&with_vdot(&[0.0, 0.5, -0.5, 0.0]));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].phase(), Phase::Mixed);
    }

    #[test]
    fn trapezoid_dwell_joins_preceding_segment() {
        // 20-sample trace: 2 leading dwell, 6 up, 4 dwell (with jitter inside the band), 8 down.
        // By hand: segment 1 = samples 0..12 (inflation), segment 2 = samples 12..20 (deflation).
        let vd = [
            0.0, 0.2, 20.0, 20.0, 20.0, 20.0, 20.0, 20.0, 0.0, 0.9, -0.9, 0.0, -20.0, -20.0, -20.0, -20.0, -20.0,
            -20.0, -20.0, -20.0,
        ];
        let segs = segment_cycles(&with_vdot(&vd));
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].phase(), Phase::Inflation);
        assert_eq!(segs[0].len(), 12);
        assert_eq!(segs[1].phase(), Phase::Deflation);
        assert_eq!(segs[1].len(), 8);
        assert_eq!(segs[1].samples()[0].t, 12.0 / 25.0);
    }

    fn many(n: usize) -> Dataset {
        let trajs = (0..n)
            .map(|c| {
                let samples = (0..3)
                    .map(|i| Sample::new(i as f64 / 25.0, c as f64, 0.0, 0.0, 0.0))
                    .collect();
                Trajectory::new(samples, 25.0, c as u32, Phase::Mixed).unwrap()
            })
            .collect();
        Dataset::new(trajs, 0, BTreeMap::new()).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = many(20);
        let (a, b) = split(&ds, 0.8, 1).unwrap();
        assert_eq!((a.trajectories().len(), b.trajectories().len()), (16, 4));
        let (a2, b2) = split(&ds, 0.8, 1).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let (a3, _) = split(&ds, 0.8, 2).unwrap();
        assert_ne!(a, a3);

        // floor rule: 0.5 · 21 = 10.5 → 10 in the first part
        let (a, b) = split(&many(21), 0.5, 7).unwrap();
        assert_eq!((a.trajectories().len(), b.trajectories().len()), (10, 11));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split(&many(1), 0.5, 0),
            Err(DatasetError::InsufficientTrajectories(1))
        ));
        assert!(matches!(split(&many(4), 1.0, 0), Err(DatasetError::BadRatio(_))));
        assert!(matches!(split(&many(4), 0.0, 0), Err(DatasetError::BadRatio(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segments_partition_the_input(vd in prop::collection::vec(-50.0f64..50.0, 1..120)) {
                let traj = with_vdot(&vd);
                let segs = segment_cycles(&traj);
                let joined: Vec<Sample> = segs.iter().flat_map(|s| s.samples().iter().copied()).collect();
                prop_assert_eq!(joined.as_slice(), traj.samples());
                for w in segs.windows(2) {
                    prop_assert_ne!(w[0].phase(), w[1].phase());
                }
            }

            #[test]
            fn differentiate_then_integrate(amp in 10.0f64..500.0, freq in 0.01f64..0.1, phase in 0.0f64..std::f64::consts::TAU) {
                let v = |t: f64| amp * (1.0 + (2.0 * std::f64::consts::PI * freq * t + phase).sin());
                let traj = differentiate(&traj_from(v, 1000)).unwrap();
                let s = traj.samples();
                let mut acc = s[0].v;
                let mut worst: f64 = 0.0;
                for w in s.windows(2) {
                    acc += 0.5 * (w[0].v_dot + w[1].v_dot) * (w[1].t - w[0].t);
                    worst = worst.max((acc - w[1].v).abs());
                }
                let range = s.iter().map(|x| x.v).fold(f64::MIN, f64::max)
                    - s.iter().map(|x| x.v).fold(f64::MAX, f64::min);
                prop_assert!(worst <= 1e-3 * range, "drift {} vs range {}", worst, range);
            }
        }
    }
}
