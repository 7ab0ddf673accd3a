//! Versioned text formats for datasets and trained weights.
//!
//! Weight formats print floats with Rust's shortest round-trip formatting,
//! so a save/load cycle reproduces the exact f64 bits. Dataset records use
//! fixed-precision decimals per the record format contract.

use std::fmt::Write as _;
use std::path::Path;

use vlbc_core::classify::{Classifier, LinearHead};
use vlbc_core::math::Matrix;
use vlbc_core::paths::WarpingField;
use vlbc_core::pseudo::PseudoLabeler;
use vlbc_core::world::{FeatureImage, LabeledSample, Origin};

use crate::error::{HarnessError, Result};

const DATASET_MAGIC: &str = "vlbc-dataset v1";
const FIELDS_MAGIC: &str = "vlbc-fields v1";
const CLASSIFIER_MAGIC: &str = "vlbc-classifier v1";
const LABELER_MAGIC: &str = "vlbc-labeler v1";

fn format_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(msg.into())
}

fn parse_f64(tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| format_err(format!("bad float '{tok}'")))
}

fn parse_usize(tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| format_err(format!("bad count '{tok}'")))
}

fn parse_bit(tok: &str) -> Result<bool> {
    match tok {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format_err(format!("bad bit '{other}'"))),
    }
}

fn float_line(values: &[f64]) -> String {
    let mut line = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{v}");
    }
    line
}

fn parse_float_line(line: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(parse_f64)
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(format_err(format!(
            "{what}: expected {expected} values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

fn origin_tag(origin: Origin) -> &'static str {
    match origin {
        Origin::Real => "real",
        Origin::Synthetic => "synthetic",
        Origin::Augmented => "augmented",
    }
}

fn parse_origin(tok: &str) -> Result<Origin> {
    match tok {
        "real" => Ok(Origin::Real),
        "synthetic" => Ok(Origin::Synthetic),
        "augmented" => Ok(Origin::Augmented),
        other => Err(format_err(format!("bad origin tag '{other}'"))),
    }
}

/// Line-delimited dataset records: a magic line, a header with d_x and the
/// attribute count, then one record per line of fixed-precision feature
/// values, attribute bits, the protected bit, and the origin tag.
pub fn write_dataset(samples: &[LabeledSample]) -> Result<String> {
    let first = samples
        .first()
        .ok_or_else(|| format_err("cannot serialize an empty dataset"))?;
    let d_x = first.image.values.len();
    let m = first.attributes.len();
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC}");
    let _ = writeln!(out, "{d_x} {m}");
    for s in samples {
        for v in &s.image.values {
            let _ = write!(out, "{v:.9} ");
        }
        for a in &s.attributes {
            let _ = write!(out, "{} ", *a as u8);
        }
        let _ = writeln!(out, "{} {}", s.protected as u8, origin_tag(s.origin));
    }
    Ok(out)
}

pub fn read_dataset(text: &str) -> Result<Vec<LabeledSample>> {
    let mut lines = text.lines();
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(format_err("missing dataset header"));
    }
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| format_err("truncated dataset header"))?
        .split_whitespace()
        .collect();
    if header.len() != 2 {
        return Err(format_err("dataset header needs d_x and attribute count"));
    }
    let d_x = parse_usize(header[0])?;
    let m = parse_usize(header[1])?;
    let mut samples = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != d_x + m + 2 {
            return Err(format_err(format!(
                "record has {} tokens, expected {}",
                tokens.len(),
                d_x + m + 2
            )));
        }
        let values: Vec<f64> = tokens[..d_x]
            .iter()
            .map(|t| parse_f64(t))
            .collect::<Result<_>>()?;
        let attributes: Vec<bool> = tokens[d_x..d_x + m]
            .iter()
            .map(|t| parse_bit(t))
            .collect::<Result<_>>()?;
        let protected = parse_bit(tokens[d_x + m])?;
        let origin = parse_origin(tokens[d_x + m + 1])?;
        samples.push(LabeledSample {
            image: FeatureImage { values },
            attributes,
            protected,
            origin,
        });
    }
    Ok(samples)
}

/// Trained warping fields: header with field count, support count, code
/// dimension, and the bandwidth policy, then per-field bandwidths, weights,
/// and support coordinates at full precision.
pub fn write_fields(fields: &[WarpingField]) -> Result<String> {
    let first = fields
        .first()
        .ok_or_else(|| format_err("cannot serialize an empty field list"))?;
    let q = first.supports.len();
    let d_s = first.dim();
    let mut out = String::new();
    let _ = writeln!(out, "{FIELDS_MAGIC}");
    let _ = writeln!(out, "fields={} supports={q} d_s={d_s} gamma=fixed", fields.len());
    for (k, f) in fields.iter().enumerate() {
        if f.supports.len() != q || f.dim() != d_s {
            return Err(format_err("fields disagree on shape"));
        }
        let _ = writeln!(out, "field {k}");
        let _ = writeln!(out, "{}", float_line(&f.bandwidths));
        let _ = writeln!(out, "{}", float_line(&f.weights));
        for support in &f.supports {
            let _ = writeln!(out, "{}", float_line(support));
        }
    }
    Ok(out)
}

pub fn read_fields(text: &str) -> Result<Vec<WarpingField>> {
    let mut lines = text.lines();
    if lines.next() != Some(FIELDS_MAGIC) {
        return Err(format_err("missing fields header"));
    }
    let header = lines
        .next()
        .ok_or_else(|| format_err("truncated fields header"))?;
    let mut k_total = None;
    let mut q = None;
    let mut d_s = None;
    for part in header.split_whitespace() {
        if let Some(v) = part.strip_prefix("fields=") {
            k_total = Some(parse_usize(v)?);
        } else if let Some(v) = part.strip_prefix("supports=") {
            q = Some(parse_usize(v)?);
        } else if let Some(v) = part.strip_prefix("d_s=") {
            d_s = Some(parse_usize(v)?);
        }
    }
    let (k_total, q, d_s) = match (k_total, q, d_s) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(format_err("fields header missing counts")),
    };
    let mut fields = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let marker = lines
            .next()
            .ok_or_else(|| format_err("truncated field block"))?;
        if marker != format!("field {k}") {
            return Err(format_err(format!("expected 'field {k}', got '{marker}'")));
        }
        let bandwidths = parse_float_line(
            lines.next().ok_or_else(|| format_err("missing bandwidths"))?,
            q,
            "bandwidths",
        )?;
        let weights = parse_float_line(
            lines.next().ok_or_else(|| format_err("missing weights"))?,
            q,
            "weights",
        )?;
        let mut supports = Vec::with_capacity(q);
        for _ in 0..q {
            supports.push(parse_float_line(
                lines.next().ok_or_else(|| format_err("missing support"))?,
                d_s,
                "support",
            )?);
        }
        fields.push(WarpingField {
            supports,
            weights,
            bandwidths,
        });
    }
    Ok(fields)
}

/// Classifier weights: dimensions header, hidden rows, then bias and output
/// lines, full precision.
pub fn write_classifier(clf: &Classifier) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CLASSIFIER_MAGIC}");
    let _ = writeln!(
        out,
        "d_x={} hidden={}",
        clf.hidden_weights.cols, clf.hidden_weights.rows
    );
    for r in 0..clf.hidden_weights.rows {
        let _ = writeln!(out, "{}", float_line(clf.hidden_weights.row(r)));
    }
    let _ = writeln!(out, "{}", float_line(&clf.hidden_bias));
    let _ = writeln!(out, "{}", float_line(&clf.output_weights));
    let _ = writeln!(out, "{}", float_line(&[clf.output_bias]));
    out
}

pub fn read_classifier(text: &str) -> Result<Classifier> {
    let mut lines = text.lines();
    if lines.next() != Some(CLASSIFIER_MAGIC) {
        return Err(format_err("missing classifier header"));
    }
    let header = lines
        .next()
        .ok_or_else(|| format_err("truncated classifier header"))?;
    let mut d_x = None;
    let mut hidden = None;
    for part in header.split_whitespace() {
        if let Some(v) = part.strip_prefix("d_x=") {
            d_x = Some(parse_usize(v)?);
        } else if let Some(v) = part.strip_prefix("hidden=") {
            hidden = Some(parse_usize(v)?);
        }
    }
    let (d_x, hidden) = match (d_x, hidden) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(format_err("classifier header missing dimensions")),
    };
    let mut data = Vec::with_capacity(hidden * d_x);
    for _ in 0..hidden {
        data.extend(parse_float_line(
            lines.next().ok_or_else(|| format_err("missing hidden row"))?,
            d_x,
            "hidden row",
        )?);
    }
    let hidden_bias = parse_float_line(
        lines.next().ok_or_else(|| format_err("missing hidden bias"))?,
        hidden,
        "hidden bias",
    )?;
    let output_weights = parse_float_line(
        lines.next().ok_or_else(|| format_err("missing output weights"))?,
        hidden,
        "output weights",
    )?;
    let output_bias = parse_float_line(
        lines.next().ok_or_else(|| format_err("missing output bias"))?,
        1,
        "output bias",
    )?[0];
    Ok(Classifier {
        hidden_weights: Matrix {
            rows: hidden,
            cols: d_x,
            data,
        },
        hidden_bias,
        output_weights,
        output_bias,
    })
}

/// Pseudo-labeler heads with their constant flags and reported accuracies.
pub fn write_labeler(labeler: &PseudoLabeler) -> Result<String> {
    let first = labeler
        .heads
        .first()
        .ok_or_else(|| format_err("labeler has no heads"))?;
    let mut out = String::new();
    let _ = writeln!(out, "{LABELER_MAGIC}");
    let _ = writeln!(
        out,
        "heads={} d_x={} noise_rate={}",
        labeler.heads.len(),
        first.weights.len(),
        labeler.noise_rate
    );
    for (i, head) in labeler.heads.iter().enumerate() {
        let constant = match labeler.constant_heads[i] {
            None => "none".to_string(),
            Some(bit) => (bit as u8).to_string(),
        };
        let _ = writeln!(
            out,
            "head {i} constant={constant} accuracy={}",
            labeler.head_accuracy[i]
        );
        let _ = writeln!(out, "{}", float_line(&head.weights));
        let _ = writeln!(out, "{}", float_line(&[head.bias]));
    }
    Ok(out)
}

pub fn read_labeler(text: &str) -> Result<PseudoLabeler> {
    let mut lines = text.lines();
    if lines.next() != Some(LABELER_MAGIC) {
        return Err(format_err("missing labeler header"));
    }
    let header = lines
        .next()
        .ok_or_else(|| format_err("truncated labeler header"))?;
    let mut head_count = None;
    let mut d_x = None;
    let mut noise_rate = None;
    for part in header.split_whitespace() {
        if let Some(v) = part.strip_prefix("heads=") {
            head_count = Some(parse_usize(v)?);
        } else if let Some(v) = part.strip_prefix("d_x=") {
            d_x = Some(parse_usize(v)?);
        } else if let Some(v) = part.strip_prefix("noise_rate=") {
            noise_rate = Some(parse_f64(v)?);
        }
    }
    let (head_count, d_x, noise_rate) = match (head_count, d_x, noise_rate) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(format_err("labeler header incomplete")),
    };
    let mut heads = Vec::with_capacity(head_count);
    let mut constant_heads = Vec::with_capacity(head_count);
    let mut head_accuracy = Vec::with_capacity(head_count);
    for i in 0..head_count {
        let marker = lines
            .next()
            .ok_or_else(|| format_err("truncated head block"))?;
        let mut constant = None;
        let mut accuracy = None;
        let mut ok = false;
        for part in marker.split_whitespace() {
            if part == "head" {
                continue;
            }
            if part == i.to_string() {
                ok = true;
            } else if let Some(v) = part.strip_prefix("constant=") {
                constant = Some(match v {
                    "none" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => return Err(format_err(format!("bad constant flag '{other}'"))),
                });
            } else if let Some(v) = part.strip_prefix("accuracy=") {
                accuracy = Some(parse_f64(v)?);
            }
        }
        if !ok {
            return Err(format_err(format!("expected head {i} marker")));
        }
        let weights = parse_float_line(
            lines.next().ok_or_else(|| format_err("missing head weights"))?,
            d_x,
            "head weights",
        )?;
        let bias = parse_float_line(
            lines.next().ok_or_else(|| format_err("missing head bias"))?,
            1,
            "head bias",
        )?[0];
        heads.push(LinearHead { weights, bias });
        constant_heads.push(constant.ok_or_else(|| format_err("head missing constant flag"))?);
        head_accuracy.push(accuracy.ok_or_else(|| format_err("head missing accuracy"))?);
    }
    Ok(PseudoLabeler {
        heads,
        constant_heads,
        head_accuracy,
        noise_rate,
    })
}

/// Loss trace as a two-column CSV.
pub fn write_loss_trace(trace: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in trace.iter().enumerate() {
        let _ = writeln!(out, "{epoch},{loss}");
    }
    out
}

pub fn write_string(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}
