//! Fusing-event files, histogram smoothing and current-capacity sweeps.

use rayon::prelude::*;
use serde::Serialize;
use std::io::{Read, Write};
use std::path::Path;

use crate::coupling::{fixed_point, require_converged, CouplingOptions};
use crate::error::{invalid, Error, Result};
use crate::model::{Drive, Material, ModelConfig};
use crate::optimizer::FusingEvent;
use crate::wire::midpoint_temperature;

/// One row of an event file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawEvent {
    pub wire_id: String,
    pub material: Material,
    pub position: Option<u32>,
    /// A
    pub current: f64,
    /// s
    pub duration: f64,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RawEventFile {
    pub events: Vec<RawEvent>,
}

impl RawEventFile {
    /// Events of one wire id (and position, when given).
    pub fn select(&self, wire_id: Option<&str>, position: Option<u32>) -> Vec<&RawEvent> {
        self.events
            .iter()
            .filter(|e| wire_id.is_none_or(|w| e.wire_id == w))
            .filter(|e| position.is_none_or(|p| e.position == Some(p)))
            .collect()
    }

    pub fn wire_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for e in &self.events {
            if !ids.contains(&e.wire_id) {
                ids.push(e.wire_id.clone());
            }
        }
        ids
    }
}

/// Factor to SI for the unit suffix of a column header.
fn column_scale(header: &str, stem: &str, units: &[(&str, f64)]) -> Result<f64> {
    let suffix = header
        .strip_prefix(stem)
        .and_then(|s| s.strip_prefix('_'))
        .ok_or_else(|| Error::Unit(format!("column `{header}` needs a unit suffix, e.g. `{stem}_{}`", units[0].0)))?;
    units
        .iter()
        .find(|u| u.0 == suffix)
        .map(|u| u.1)
        .ok_or_else(|| Error::Unit(format!("column `{header}`: unknown unit `{suffix}`")))
}

/// Read `wire_id, material, position, I0_<unit>, t_fuse_<unit>` rows.
///
/// Currents may be given in `amps`/`A`/`mA`, durations in
/// `seconds`/`s`/`ms`/`us`. An empty position field means unknown.
pub fn read_events<R: Read>(reader: R) -> Result<RawEventFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let cols: Vec<String> = headers.iter().map(str::to_string).collect();
    if cols.len() != 5 || cols[0] != "wire_id" || cols[1] != "material" || cols[2] != "position" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header wire_id,material,position,I0_<unit>,t_fuse_<unit>, got {}", cols.join(",")),
        });
    }
    let i_scale = column_scale(&cols[3], "I0", &[("amps", 1.0), ("A", 1.0), ("mA", 1e-3)])?;
    let t_scale = column_scale(&cols[4], "t_fuse", &[("seconds", 1.0), ("s", 1.0), ("ms", 1e-3), ("us", 1e-6)])?;

    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fail = |message: String| Error::Parse { line, message };
        let material = Material::parse(&rec[1]).ok_or_else(|| fail(format!("unknown material `{}`", &rec[1])))?;
        let position = if rec[2].is_empty() {
            None
        } else {
            Some(rec[2].parse::<u32>().map_err(|_| fail(format!("bad position `{}`", &rec[2])))?)
        };
        let number = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| fail(format!("{what} `{s}` is not a number")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(fail(format!("{what} must be positive, got {v}")));
            }
            Ok(v)
        };
        events.push(RawEvent {
            wire_id: rec[0].to_string(),
            material,
            position,
            current: number(&rec[3], "current")? * i_scale,
            duration: number(&rec[4], "fusing time")? * t_scale,
            line,
        });
    }
    Ok(RawEventFile { events })
}

pub fn load_events(path: impl AsRef<Path>) -> Result<RawEventFile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_events(file)
}

/// Histogram-smoothed `(mean I, median t)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilteredSeries {
    pub events: Vec<FusingEvent>,
    /// Number of bins laid over the current range.
    pub bins: usize,
    /// Events per emitted pair.
    pub counts: Vec<usize>,
    /// Method notes for reports.
    pub binning: &'static str,
    pub statistic: &'static str,
    /// Adjacent pairs where the time rises with the current.
    pub monotonicity_violations: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile(v, 0.5)
}

/// Freedman-Diaconis bin count over the currents, at least 2; falls back
/// to Sturges when the interquartile range vanishes.
pub fn freedman_diaconis_bins(currents: &[f64]) -> usize {
    let n = currents.len();
    if n < 2 {
        return 2;
    }
    let mut s = currents.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[n - 1] - s[0];
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let bins = if iqr > 0.0 && range > 0.0 {
        (range / (2.0 * iqr * (n as f64).powf(-1.0 / 3.0))).ceil() as usize
    } else {
        (n as f64).log2().ceil() as usize + 1
    };
    bins.clamp(2, n.max(2))
}

/// Bin events by current into `bins` equal-width bins (Freedman-Diaconis
/// when `None`) and emit the mean current and median fusing time of every
/// non-empty bin, ordered by current.
pub fn histogram_filter(events: &[FusingEvent], bins: Option<usize>) -> Result<FilteredSeries> {
    let currents: Vec<f64> = events.iter().map(|e| e.current).collect();
    let bins = match bins {
        Some(b) if b < 2 => return Err(invalid("bins", "need at least 2 bins")),
        Some(b) => b,
        None => freedman_diaconis_bins(&currents),
    };
    let (lo, hi) = currents
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
    let width = (hi - lo) / bins as f64;
    let mut groups: Vec<Vec<&FusingEvent>> = vec![Vec::new(); bins];
    for e in events {
        let k = if width > 0.0 { (((e.current - lo) / width) as usize).min(bins - 1) } else { 0 };
        groups[k].push(e);
    }
    let mut out = Vec::new();
    let mut counts = Vec::new();
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let mean_i = g.iter().map(|e| e.current).sum::<f64>() / g.len() as f64;
        let mut ts: Vec<f64> = g.iter().map(|e| e.duration).collect();
        out.push(FusingEvent {
            current: mean_i,
            duration: median(&mut ts),
        });
        counts.push(g.len());
    }
    let violations = out.windows(2).filter(|w| w[1].duration > w[0].duration).count();
    if violations > 0 {
        log::warn!("{violations} filtered pairs have fusing time rising with current");
    }
    Ok(FilteredSeries {
        events: out,
        bins,
        counts,
        binning: "equal-width bins over I0",
        statistic: "mean I0, median t_fuse",
        monotonicity_violations: violations,
    })
}

/// Outcome of one capacity point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityStatus {
    Ok,
    /// The model ran past its validity range (thermal runaway).
    Runaway,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub current: f64,
    /// Midpoint temperature, K; `None` on runaway.
    pub midpoint: Option<f64>,
    pub status: CapacityStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityCurve {
    pub hold: f64,
    pub melting_temperature: f64,
    pub points: Vec<CapacityPoint>,
    /// First current at which the midpoint reaches the melting temperature.
    pub crossing: Option<f64>,
}

impl CapacityCurve {
    /// CSV with columns `I0_A,T_mid_K,status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["I0_A", "T_mid_K", "status"]).map_err(io)?;
        for p in &self.points {
            let t = p.midpoint.map(|v| format!("{v:.6}")).unwrap_or_default();
            let s = match p.status {
                CapacityStatus::Ok => "ok",
                CapacityStatus::Runaway => "runaway",
            };
            w.write_record([format!("{}", p.current), t, s.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whether the midpoint temperature rises strictly along the grid
    /// (runaway counts as hotter than any finite point).
    pub fn is_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| match (w[0].midpoint, w[1].midpoint) {
            (Some(a), Some(b)) => b > a,
            (Some(_), None) | (None, None) => true,
            (None, Some(_)) => false,
        })
    }
}

fn evaluate(config: &ModelConfig, coupling: &CouplingOptions, current: f64, hold: f64) -> Result<Option<f64>> {
    let drive = Drive::new(current, hold)?;
    let attempt = fixed_point(config, &drive, coupling)
        .and_then(require_converged)
        .and_then(|r| midpoint_temperature(config, &drive, &r.state));
    match attempt {
        Ok(t) => Ok(Some(t)),
        Err(Error::InvalidParameter { name, reason }) => Err(Error::InvalidParameter { name, reason }),
        Err(e) if current > 0.0 => {
            log::debug!("I = {current} A treated as runaway: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Illinois-modified inverse interpolation inside a bracket whose cold end
/// is below melting; a runaway hot end is halved towards the cold end.
fn refine_crossing(
    config: &ModelConfig,
    coupling: &CouplingOptions,
    melt: f64,
    hold: f64,
    cold: (f64, f64),
    hot: (f64, Option<f64>),
) -> Result<f64> {
    let (mut a, mut fa) = (cold.0, cold.1 - melt);
    let (mut b, mut fb) = (hot.0, hot.1.map(|t| t - melt));
    let mut side = 0;
    for _ in 0..80 {
        if b - a <= 1e-9 * b {
            break;
        }
        let m = match fb {
            Some(fb) => (a * fb - b * fa) / (fb - fa),
            None => 0.5 * (a + b),
        };
        let fm = evaluate(config, coupling, m, hold)?.map(|t| t - melt);
        match fm {
            Some(f) if f.abs() <= 1e-9 * melt => return Ok(m),
            Some(f) if f < 0.0 => {
                (a, fa) = (m, f);
                if side == -1 {
                    fb = fb.map(|v| 0.5 * v);
                }
                side = -1;
            }
            _ => {
                (b, fb) = (m, fm);
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
    }
    Ok(match fb {
        Some(fb) => (a * fb - b * fa) / (fb - fa),
        None => 0.5 * (a + b),
    })
}

/// Midpoint temperature after `hold` seconds over a grid of currents, with
/// the melting crossing refined inside the first bracketing grid interval.
/// A runaway point counts as above melting.
pub fn capacity_curve(
    config: &ModelConfig,
    coupling: &CouplingOptions,
    melting_temperature: f64,
    hold: f64,
    currents: &[f64],
) -> Result<CapacityCurve> {
    if currents.is_empty() {
        return Err(invalid("currents", "empty current grid"));
    }
    if currents.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("currents", "grid must be strictly increasing"));
    }
    let temps = currents
        .par_iter()
        .map(|&i| evaluate(config, coupling, i, hold))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<CapacityPoint> = currents
        .iter()
        .zip(&temps)
        .map(|(&current, &midpoint)| CapacityPoint {
            current,
            midpoint,
            status: if midpoint.is_some() { CapacityStatus::Ok } else { CapacityStatus::Runaway },
        })
        .collect();
    let hot = |t: Option<f64>| t.is_none_or(|v| v >= melting_temperature);
    let mut crossing = None;
    if hot(temps[0]) {
        crossing = Some(currents[0]);
    } else if let Some(k) = (1..temps.len()).find(|&k| hot(temps[k])) {
        crossing = Some(refine_crossing(
            config,
            coupling,
            melting_temperature,
            hold,
            (currents[k - 1], temps[k - 1].unwrap_or(f64::NAN)),
            (currents[k], temps[k]),
        )?);
    }
    Ok(CapacityCurve {
        hold,
        melting_temperature,
        points,
        crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "wire_id,material,position,I0_amps,t_fuse_seconds\n";

    #[test]
    fn reads_well_formed_rows() {
        let text = format!("{HEADER}cu10,Cu,1,5.2,0.01\ncu10,cu,2,4.9,0.02\nau10,Au,,3.0,1.5\n");
        let f = read_events(text.as_bytes()).unwrap();
        assert_eq!(f.events.len(), 3);
        assert_eq!(f.events[2].position, None);
        assert_eq!(f.events[0].material, Material::Cu);
        assert_eq!(f.events[1].line, 3);
        assert_eq!(f.wire_ids(), vec!["cu10", "au10"]);
        assert_eq!(f.select(Some("cu10"), Some(2)).len(), 1);
    }

    #[test]
    fn negative_current_names_its_line() {
        let text = format!("{HEADER}cu10,Cu,1,5.2,0.01\ncu10,Cu,1,-4.9,0.02\n");
        match read_events(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("current"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_material_is_rejected() {
        let text = format!("{HEADER}x,Pt,1,5.2,0.01\n");
        assert!(matches!(read_events(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_rows_are_kept() {
        let text = format!("{HEADER}cu10,Cu,1,5.2,0.01\ncu10,Cu,1,5.2,0.01\n");
        assert_eq!(read_events(text.as_bytes()).unwrap().events.len(), 2);
    }

    #[test]
    fn column_units_are_converted() {
        let text = "wire_id,material,position,I0_mA,t_fuse_ms\na,Au,1,3700,500\n";
        let e = &read_events(text.as_bytes()).unwrap().events[0];
        assert!((e.current - 3.7).abs() < 1e-12 && (e.duration - 0.5).abs() < 1e-12);
        let bad = "wire_id,material,position,I0_kA,t_fuse_s\na,Au,1,3,5\n";
        assert!(matches!(read_events(bad.as_bytes()), Err(Error::Unit(_))));
        let bare = "wire_id,material,position,I0,t_fuse\na,Au,1,3,5\n";
        assert!(matches!(read_events(bare.as_bytes()), Err(Error::Unit(_))));
    }

    fn ev(current: f64, duration: f64) -> FusingEvent {
        FusingEvent { current, duration }
    }

    #[test]
    fn identical_events_collapse_to_one_pair() {
        let events = vec![ev(4.0, 0.3); 7];
        let s = histogram_filter(&events, None).unwrap();
        assert_eq!(s.events, vec![ev(4.0, 0.3)]);
        assert_eq!(s.counts, vec![7]);
    }

    #[test]
    fn two_clusters_give_centroids_and_medians() {
        let events = vec![ev(2.0, 1.0), ev(2.2, 5.0), ev(2.1, 2.0), ev(8.0, 0.1), ev(8.4, 0.3), ev(8.2, 0.2), ev(8.3, 9.0)];
        let s = histogram_filter(&events, Some(2)).unwrap();
        assert_eq!(s.events.len(), 2);
        assert!((s.events[0].current - 2.1).abs() < 1e-12);
        assert_eq!(s.events[0].duration, 2.0);
        assert!((s.events[1].current - 8.225).abs() < 1e-12);
        assert!((s.events[1].duration - 0.25).abs() < 1e-12);
        assert_eq!(s.monotonicity_violations, 0);
    }

    #[test]
    fn one_bin_is_refused() {
        assert!(histogram_filter(&[ev(1.0, 1.0)], Some(1)).is_err());
    }

    #[test]
    fn rising_times_are_counted_not_rejected() {
        let s = histogram_filter(&[ev(1.0, 0.1), ev(5.0, 0.9)], Some(2)).unwrap();
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.monotonicity_violations, 1);
    }

    proptest! {
        #[test]
        fn filtered_series_fits_in_the_bins(
            raw in prop::collection::vec((0.5f64..20.0, 1e-3f64..10.0), 1..200),
            bins in prop::option::of(2usize..40),
        ) {
            let events: Vec<FusingEvent> = raw.iter().map(|&(i, t)| ev(i, t)).collect();
            let s = histogram_filter(&events, bins).unwrap();
            prop_assert!(s.events.len() <= s.bins);
            prop_assert_eq!(s.counts.iter().sum::<usize>(), events.len());
            prop_assert!(s.events.windows(2).all(|w| w[1].current > w[0].current));
            let (lo, hi) = raw.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.0), b.max(r.0)));
            prop_assert!(s.events.iter().all(|e| e.current >= lo - 1e-12 && e.current <= hi + 1e-12));
        }
    }
}
