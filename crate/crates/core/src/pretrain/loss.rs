//! Symmetric in-batch InfoNCE and its nested-width average.

use ndarray::Array2;
use rovtl_autograd::{Graph, Matrix, Var};

use crate::error::{CoreError, Result};

/// Builds `½ [CE(sim/τ, diag) + CE(simᵀ/τ, diag)]` inside `g`.
pub fn contrastive_loss_graph(g: &mut Graph, z_i: Var, z_t: Var, temperature: f64) -> Result<Var> {
    let (n, w) = g.shape(z_i);
    if g.shape(z_t) != (n, w) {
        return Err(CoreError::Shape(format!(
            "image embeddings {:?} vs tabular embeddings {:?}",
            (n, w),
            g.shape(z_t)
        )));
    }
    if n < 2 {
        return Err(CoreError::Config(format!("contrastive loss needs at least 2 pairs, got {n}")));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(CoreError::Config(format!("temperature must be positive, got {temperature}")));
    }
    let sim = g.matmul_t(z_i, z_t);
    let logits = g.scale(sim, 1.0 / temperature);
    let eye = g.constant(Array2::eye(n));
    let rows = g.log_softmax_rows(logits);
    let cols_t = g.transpose(logits);
    let cols = g.log_softmax_rows(cols_t);
    let both = g.add(rows, cols);
    let diag = g.mul(both, eye);
    let total = g.sum(diag);
    Ok(g.scale(total, -0.5 / n as f64))
}

/// Mean of the per-width losses; `z_i[k]` and `z_t[k]` share width `k`.
pub fn matryoshka_loss_graph(g: &mut Graph, z_i: &[Var], z_t: &[Var], temperature: f64) -> Result<Var> {
    if z_i.len() != z_t.len() || z_i.is_empty() {
        return Err(CoreError::Shape(format!(
            "{} image widths vs {} tabular widths",
            z_i.len(),
            z_t.len()
        )));
    }
    let mut terms = Vec::with_capacity(z_i.len());
    for (&a, &b) in z_i.iter().zip(z_t) {
        terms.push(contrastive_loss_graph(g, a, b, temperature)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    Ok(g.scale(total, 1.0 / terms.len() as f64))
}

pub fn contrastive_loss(z_i: &Matrix, z_t: &Matrix, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(z_i.clone());
    let b = g.constant(z_t.clone());
    let l = contrastive_loss_graph(&mut g, a, b, temperature)?;
    Ok(g.scalar_value(l))
}

pub fn matryoshka_contrastive_loss(z_i: &[Matrix], z_t: &[Matrix], temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let a: Vec<Var> = z_i.iter().map(|z| g.constant(z.clone())).collect();
    let b: Vec<Var> = z_t.iter().map(|z| g.constant(z.clone())).collect();
    let l = matryoshka_loss_graph(&mut g, &a, &b, temperature)?;
    Ok(g.scalar_value(l))
}
