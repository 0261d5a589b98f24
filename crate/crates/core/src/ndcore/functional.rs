//! Tape-free versions of the elementwise and reduction ops.

use super::{NdError, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect()).expect("same shape")
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64, NdError> {
    if label >= logits.len() {
        return Err(NdError::LabelOutOfRange { label, classes: logits.len() });
    }
    Ok(log_sum_exp(logits) - logits[label])
}

fn valid_rows(h: &Tensor, mask: Option<&[bool]>) -> Result<Vec<usize>, NdError> {
    let rows: Vec<usize> = match mask {
        Some(m) => (0..h.rows()).filter(|&i| m.get(i).copied().unwrap_or(false)).collect(),
        None => (0..h.rows()).collect(),
    };
    if rows.is_empty() {
        return Err(NdError::EmptyMask);
    }
    Ok(rows)
}

/// Column-wise max over the rows where `mask` is true (all rows when `None`).
pub fn readout_max(h: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NdError> {
    let rows = valid_rows(h, mask)?;
    let c = h.cols();
    let mut out = h.row(rows[0]).to_vec();
    for &i in &rows[1..] {
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            if *v > *o {
                *o = *v;
            }
        }
    }
    debug_assert_eq!(out.len(), c);
    Ok(Tensor::vector(out))
}

/// Column-wise mean over the rows where `mask` is true.
pub fn readout_mean(h: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NdError> {
    let rows = valid_rows(h, mask)?;
    let mut out = vec![0.0; h.cols()];
    for &i in &rows {
        for (o, v) in out.iter_mut().zip(h.row(i)) {
            *o += v;
        }
    }
    let k = rows.len() as f64;
    Ok(Tensor::vector(out.into_iter().map(|v| v / k).collect()))
}
