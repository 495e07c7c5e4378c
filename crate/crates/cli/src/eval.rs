//! Evaluation report: per-subject/frame/class metric rows plus a single
//! vFID summary row, written as CSV.

use std::io::Write;
use std::path::Path;

use flow4d_core::grid::ShapeSequence;
use flow4d_core::metrics::{cycle_dsc, dsc, hd95, vfid, volume_curve};
use flow4d_core::{Error, Result};

const FOREGROUND_CLASSES: [u8; 5] = [1, 2, 3, 4, 5];

pub fn parse_metrics(spec: &str) -> Result<Vec<String>> {
    let metrics: Vec<String> = spec.split(',').map(|m| m.trim().to_string()).collect();
    for m in &metrics {
        if !["dsc", "hd95", "cycledsc", "vfid"].contains(&m.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown metric {m:?}")));
        }
    }
    Ok(metrics)
}

/// Writes `subject_id,frame,class,metric,value` rows. An undefined HD95
/// (empty mask on either side) is recorded as `nan`, not 0.
pub fn write_report(
    pred: &[(String, ShapeSequence)],
    reference: &[(String, ShapeSequence)],
    metrics: &[String],
    out: &Path,
) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::dim(reference.len(), pred.len(), "subject count"));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "subject_id,frame,class,metric,value")?;
    // Subjects pair positionally (sorted by file name on both sides); the
    // prediction stem is the reported subject id.
    for ((pid, pseq), (_rid, rseq)) in pred.iter().zip(reference) {
        if pseq.frames.len() != rseq.frames.len() {
            return Err(Error::dim(rseq.frames.len(), pseq.frames.len(), "frame count"));
        }
        for metric in metrics {
            match metric.as_str() {
                "dsc" => {
                    for (f, (p, r)) in pseq.frames.iter().zip(&rseq.frames).enumerate() {
                        for class in FOREGROUND_CLASSES {
                            let v = dsc(p, r, class)?;
                            writeln!(w, "{pid},{},{class},dsc,{v}", f + 1)?;
                        }
                    }
                }
                "hd95" => {
                    for (f, (p, r)) in pseq.frames.iter().zip(&rseq.frames).enumerate() {
                        for class in FOREGROUND_CLASSES {
                            match hd95(p, r, class) {
                                Ok(v) => writeln!(w, "{pid},{},{class},hd95,{v}", f + 1)?,
                                Err(Error::EmptyMask(_)) => {
                                    writeln!(w, "{pid},{},{class},hd95,nan", f + 1)?
                                }
                                Err(e) => return Err(e),
                            }
                        }
                    }
                }
                "cycledsc" => {
                    let v = cycle_dsc(pseq)?;
                    writeln!(w, "{pid},,,cycledsc,{v}")?;
                }
                "vfid" => {}
                _ => unreachable!("validated in parse_metrics"),
            }
        }
    }
    if metrics.iter().any(|m| m == "vfid") {
        let gen_curves: Vec<Vec<f64>> = pred
            .iter()
            .map(|(_, s)| volume_curve(s, s.frames[0].voxel_size))
            .collect();
        let ref_curves: Vec<Vec<f64>> = reference
            .iter()
            .map(|(_, s)| volume_curve(s, s.frames[0].voxel_size))
            .collect();
        let v = vfid(&gen_curves, &ref_curves)?;
        writeln!(w, "all,,,vfid,{v}")?;
    }
    Ok(())
}
