use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{argmax_slice, Tape};
use crate::error::Result;
use crate::losses::certainty_from_logits;
use crate::model::BackboneConfig;
use crate::network::Network;
use crate::tasks::{Example, TaskBatch};

use super::svg::{line_chart, Series};

pub const TRACE_SCHEMA: &str = "# ctm-trace v1";
pub const NEURON_SCHEMA: &str = "# ctm-neurons v1";

#[derive(Clone, Debug)]
pub struct TraceFiles {
    pub trace_csv: PathBuf,
    pub neuron_csv: PathBuf,
    pub neuron_svg: PathBuf,
    pub attention_svg: Option<PathBuf>,
}

impl TraceFiles {
    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.trace_csv.as_path(), self.neuron_csv.as_path(), self.neuron_svg.as_path()];
        v.extend(self.attention_svg.as_deref());
        v
    }
}

/// Evenly spaced neuron indices.
fn sample_neurons(width: usize, k: usize) -> Vec<usize> {
    let k = k.clamp(1, width.max(1));
    let mut idx: Vec<usize> = (0..k).map(|i| i * width / k).collect();
    idx.dedup();
    idx
}

/// Runs one example and writes `trace_{index}.csv`, `neurons_{index}.csv`,
/// `neurons_{index}.svg` and, for attending models, `attention_{index}.svg`.
///
/// Trace columns: `tick`, `certainty`, one `y_p{p}_c{c}` per output logit,
/// then one `att_h{h}_l{l}` per head and location.
pub fn write_trace(
    network: &Network,
    example: &Example,
    input_shape: &[usize],
    index: usize,
    neurons: usize,
    dir: &Path,
) -> Result<TraceFiles> {
    let batch = TaskBatch::from_examples(input_shape, std::slice::from_ref(example))?;
    let out = network.forward(&mut Tape::new(), network.params(), &batch.input, None)?;
    let spec = network.output();
    let ticks = out.logits.len();
    let att_shape = out.attention.iter().flatten().next().map(|a| (a.shape()[1], a.shape()[2]));

    let mut csv = String::new();
    writeln!(csv, "{TRACE_SCHEMA}").ok();
    let mut header = vec!["tick".to_string(), "certainty".to_string()];
    for p in 0..spec.positions {
        for c in 0..spec.classes {
            header.push(format!("y_p{p}_c{c}"));
        }
    }
    if let Some((heads, locs)) = att_shape {
        for h in 0..heads {
            for l in 0..locs {
                header.push(format!("att_h{h}_l{l}"));
            }
        }
    }
    writeln!(csv, "{}", header.join(",")).ok();
    let mut argmax: Vec<Vec<usize>> = vec![Vec::new(); att_shape.map_or(0, |s| s.0)];
    for t in 0..ticks {
        let logits = out.logits[t].data();
        let cert = logits.chunks(spec.classes).map(certainty_from_logits).sum::<f64>() / spec.positions as f64;
        let mut row = vec![(t + 1).to_string(), cert.to_string()];
        row.extend(logits.iter().map(f64::to_string));
        if let (Some(a), Some((heads, locs))) = (&out.attention[t], att_shape) {
            row.extend(a.data().iter().map(f64::to_string));
            for (h, traj) in argmax.iter_mut().enumerate() {
                traj.push(argmax_slice(&a.data()[h * locs..(h + 1) * locs]).unwrap_or(0));
            }
            debug_assert_eq!(a.len(), heads * locs);
        }
        writeln!(csv, "{}", row.join(",")).ok();
    }
    let trace_csv = dir.join(format!("trace_{index}.csv"));
    fs::write(&trace_csv, csv)?;

    let width = out.activations.first().map_or(0, |a| a.shape()[1]);
    let picked = sample_neurons(width, neurons);
    let mut ncsv = String::new();
    writeln!(ncsv, "{NEURON_SCHEMA}").ok();
    let names: Vec<String> = picked.iter().map(|i| format!("n{i}")).collect();
    writeln!(ncsv, "tick,{}", names.join(",")).ok();
    for (t, a) in out.activations.iter().enumerate() {
        let vals: Vec<String> = picked.iter().map(|&i| a.data()[i].to_string()).collect();
        writeln!(ncsv, "{},{}", t + 1, vals.join(",")).ok();
    }
    let neuron_csv = dir.join(format!("neurons_{index}.csv"));
    fs::write(&neuron_csv, ncsv)?;
    let series: Vec<Series> = picked
        .iter()
        .map(|&i| {
            Series::new(
                format!("neuron {i}"),
                out.activations
                    .iter()
                    .enumerate()
                    .map(|(t, a)| ((t + 1) as f64, a.data()[i]))
                    .collect(),
            )
        })
        .collect();
    let neuron_svg = dir.join(format!("neurons_{index}.svg"));
    fs::write(
        &neuron_svg,
        line_chart(&format!("neuron activity, instance {index}"), "tick", "activation", &series),
    )?;

    let attention_svg = match att_shape {
        Some(_) => {
            let grid = match network.config().backbone() {
                BackboneConfig::Patches { size, patch, .. } => Some(size.div_ceil(*patch)),
                _ => None,
            };
            let series: Vec<Series> = argmax
                .iter()
                .enumerate()
                .map(|(h, traj)| {
                    // Patch grids are drawn as (column, row) paths; other
                    // backbones as location index over ticks.
                    let points = traj
                        .iter()
                        .enumerate()
                        .map(|(t, &l)| match grid {
                            Some(side) => ((l % side) as f64, -((l / side) as f64)),
                            None => ((t + 1) as f64, l as f64),
                        })
                        .collect();
                    let ids: Vec<String> = traj.iter().map(usize::to_string).collect();
                    Series {
                        label: format!("head {h}"),
                        points,
                        attrs: format!(r#"data-head="{h}" data-argmax="{}""#, ids.join(" ")),
                    }
                })
                .collect();
            let (xl, yl) = if grid.is_some() { ("patch column", "−patch row") } else { ("tick", "location") };
            let path = dir.join(format!("attention_{index}.svg"));
            fs::write(
                &path,
                line_chart(&format!("attention argmax, instance {index}"), xl, yl, &series),
            )?;
            Some(path)
        }
        None => None,
    };
    Ok(TraceFiles {
        trace_csv,
        neuron_csv,
        neuron_svg,
        attention_svg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neuron_sampling() {
        assert_eq!(sample_neurons(128, 4), vec![0, 32, 64, 96]);
        assert_eq!(sample_neurons(3, 10), vec![0, 1, 2]);
        assert_eq!(sample_neurons(5, 0), vec![0]);
    }
}
