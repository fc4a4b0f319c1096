//! Measure files, trajectory CSV and summary JSON.
//!
//! Summary JSON writes every float with 17 significant digits, so identical
//! runs give byte-identical files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;

/// Reads a measure from `.json` (`{"positions": [...], "masses": [...]}`) or
/// `.csv` (header `x1,..,xd,mass`). Masses within `mass_tol` of one are
/// renormalised.
pub fn read_measure(path: &Path, mass_tol: f64) -> Result<ParticleMeasure> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (positions, masses) = match ext {
        "json" => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Raw {
                positions: Vec<Vec<f64>>,
                masses: Vec<f64>,
            }
            let raw: Raw = serde_json::from_reader(io::BufReader::new(File::open(path)?))?;
            (raw.positions, raw.masses)
        }
        "csv" => read_measure_csv(File::open(path)?)?,
        _ => {
            return Err(Error::InvalidMeasure(format!(
                "unknown measure file type '{}'",
                path.display()
            )))
        }
    };
    ParticleMeasure::normalized(positions, masses, mass_tol)
}

fn read_measure_csv<R: io::Read>(reader: R) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let d = headers.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d)
        .map(|k| format!("x{k}"))
        .chain(["mass".to_string()])
        .collect();
    if d == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::InvalidMeasure(format!(
            "measure CSV header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut positions = Vec::new();
    let mut masses = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidMeasure(format!("'{f}' is not a number")))
            })
            .collect::<Result<_>>()?;
        masses.push(values[d]);
        positions.push(values[..d].to_vec());
    }
    Ok((positions, masses))
}

pub fn write_measure_csv(path: &Path, mu: &ParticleMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=mu.dim())
        .map(|k| format!("x{k}"))
        .chain(["mass".into()])
        .collect();
    w.write_record(&header)?;
    for (x, m) in mu.positions().iter().zip(mu.masses()) {
        let row: Vec<String> = x.iter().chain([m]).map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes frames `0, stride, 2 stride, ...` and always the last frame, one
/// row per atom: `t,atom_id,x1[,x2[,x3]],mass`.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::OutOfRange("save stride must be at least 1".into()));
    }
    let d = traj.states.first().map_or(1, |s| s.dim());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = ["t".to_string(), "atom_id".to_string()]
        .into_iter()
        .chain((1..=d).map(|k| format!("x{k}")))
        .chain(["mass".to_string()])
        .collect();
    w.write_record(&header)?;
    let last = traj.len().saturating_sub(1);
    for (k, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        for (id, (x, m)) in state.positions().iter().zip(state.masses()).enumerate() {
            let row: Vec<String> = [t.to_string(), id.to_string()]
                .into_iter()
                .chain(x.iter().map(|v| v.to_string()))
                .chain([m.to_string()])
                .collect();
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(path: &Path, traj: &Trajectory, stride: usize) -> Result<()> {
    write_trajectory_csv(BufWriter::new(File::create(path)?), traj, stride)
}

/// Pretty-printed JSON with floats as `d.dddddddddddddddde±x`.
struct FixedFloats<'a>(PrettyFormatter<'a>);

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        // no "-0" in summaries
        let value = if value == 0.0 { 0.0 } else { value };
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_summary_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, FixedFloats(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_summary_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_summary_json(value)?)?;
    Ok(())
}
