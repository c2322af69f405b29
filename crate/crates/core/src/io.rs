//! CSV formats for samples, generations, trajectories and loss curves.
//!
//! Floats are written with 9 decimals and rows end in `\n`, so identical
//! inputs give identical bytes.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::datasets::SampleSet;
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::point::Point;

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn fmt(v: f64) -> String {
    format!("{v:.9}")
}

fn coord_header(dim: usize) -> impl Iterator<Item = String> {
    (0..dim).map(|j| format!("x{j}"))
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            row,
            message: format!("{other:?}"),
        },
    }
}

/// `x0,x1,...` per row.
pub fn write_samples<W: Write>(w: W, samples: &SampleSet) -> Result<()> {
    let mut out = writer(w);
    out.write_record(coord_header(samples.dim())).map_err(csv_err)?;
    for row in samples.points.rows() {
        out.write_record(row.iter().map(|v| fmt(*v))).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `sample_id,expert_id,x0,x1,...` per row.
pub fn write_generation<W: Write>(w: W, samples: &SampleSet, expert_ids: &[usize]) -> Result<()> {
    if expert_ids.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: expert_ids.len(),
        });
    }
    let mut out = writer(w);
    let header = ["sample_id".to_string(), "expert_id".to_string()]
        .into_iter()
        .chain(coord_header(samples.dim()));
    out.write_record(header).map_err(csv_err)?;
    for (i, (row, e)) in samples.points.rows().into_iter().zip(expert_ids).enumerate() {
        let rec = [i.to_string(), e.to_string()]
            .into_iter()
            .chain(row.iter().map(|v| fmt(*v)));
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `traj_id,expert_id,step,t,x0,x1,...`, one row per state.
pub fn write_trajectories<W: Write>(w: W, trajs: &[Trajectory], dim: usize) -> Result<()> {
    let mut out = writer(w);
    let header = ["traj_id", "expert_id", "step", "t"]
        .map(String::from)
        .into_iter()
        .chain(coord_header(dim));
    out.write_record(header).map_err(csv_err)?;
    for (i, tr) in trajs.iter().enumerate() {
        let e = tr.expert_id.unwrap_or(0);
        for (step, (t, z)) in tr.states.iter().enumerate() {
            if z.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: z.dim(),
                });
            }
            let rec = [i.to_string(), e.to_string(), step.to_string(), fmt(*t)]
                .into_iter()
                .chain(z.iter().map(|v| fmt(*v)));
            out.write_record(rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `step,loss` per training step.
pub fn write_losses<W: Write>(w: W, losses: &[f64]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["step", "loss"]).map_err(csv_err)?;
    for (i, l) in losses.iter().enumerate() {
        out.write_record([i.to_string(), fmt(*l)]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Samples read back from a samples or generation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub samples: SampleSet,
    /// Present when the file has an `expert_id` column.
    pub expert_ids: Option<Vec<usize>>,
}

struct Layout {
    coords: Vec<usize>,
    expert: Option<usize>,
}

fn layout(header: &csv::StringRecord) -> Result<Layout> {
    let mut coords = Vec::new();
    let mut expert = None;
    for (i, name) in header.iter().enumerate() {
        if name == "expert_id" {
            expert = Some(i);
        } else if let Some(j) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if j != coords.len() {
                return Err(Error::Parse {
                    row: 1,
                    message: format!("coordinate column `{name}` out of order"),
                });
            }
            coords.push(i);
        }
    }
    if coords.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "header has no x0.. coordinate columns".into(),
        });
    }
    Ok(Layout { coords, expert })
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse {
        row,
        message: format!("missing column {i}"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("cannot parse `{raw}` in column {i}"),
    })
}

fn finite(v: f64, row: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            row,
            message: format!("non-finite value {v}"),
        })
    }
}

/// Reads a samples CSV (`x0,...`) or a generation CSV (`sample_id,expert_id,x0,...`).
/// Parse errors carry the 1-based line number.
pub fn read_samples<R: Read>(r: R) -> Result<SampleTable> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let lay = layout(&header)?;
    let mut flat = Vec::new();
    let mut ids = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map_or(n + 2, |p| p.line() as usize);
        for &c in &lay.coords {
            flat.push(finite(field(&rec, c, row)?, row)?);
        }
        if let Some(e) = lay.expert {
            ids.push(field::<usize>(&rec, e, row)?);
        }
        n += 1;
    }
    let points = Array2::from_shape_vec((n, lay.coords.len()), flat).expect("row-major fill");
    Ok(SampleTable {
        samples: SampleSet::from_points(points),
        expert_ids: lay.expert.map(|_| ids),
    })
}

/// Reads a trajectory CSV back into trajectories, grouped by `traj_id`.
pub fn read_trajectories<R: Read>(r: R) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let lay = layout(&header)?;
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing `{name}` column"),
        })
    };
    let (id_col, t_col) = (col("traj_id")?, col("t")?);
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<usize> = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map_or(k + 2, |p| p.line() as usize);
        let id: usize = field(&rec, id_col, row)?;
        let t = finite(field(&rec, t_col, row)?, row)?;
        let z = lay
            .coords
            .iter()
            .map(|&c| field(&rec, c, row).and_then(|v| finite(v, row)))
            .collect::<Result<Vec<f64>>>()?;
        let expert = lay.expert.map(|e| field::<usize>(&rec, e, row)).transpose()?;
        if current != Some(id) {
            out.push(Trajectory {
                states: Vec::new(),
                expert_id: expert,
                steps: 0,
            });
            current = Some(id);
        }
        let tr = out.last_mut().expect("pushed above");
        tr.states.push((t, Point(z)));
        tr.steps = tr.states.len() - 1;
    }
    Ok(out)
}
