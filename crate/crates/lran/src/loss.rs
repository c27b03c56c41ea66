use ndarray::{Array1, Array2, ArrayD};
use rbc_core::ScalarField;

use crate::model::{mat_mut, LranModel, KOOPMAN};
use crate::{LranConfig, LranError};

/// Geometric weights `δ^τ / N₁` (τ = 0..T) and `δ^(τ-1) / N₂` (τ = 1..T).
fn weights(delta: f64, t: usize) -> (Vec<f64>, Vec<f64>) {
    let rec: Vec<f64> = (0..t).map(|k| delta.powi(k as i32)).collect();
    let n1: f64 = rec.iter().sum();
    let hid: Vec<f64> = (1..t).map(|k| delta.powi(k as i32 - 1)).collect();
    let n2: f64 = hid.iter().sum();
    (
        rec.iter().map(|w| w / n1).collect(),
        hid.iter().map(|w| w / n2).collect(),
    )
}

fn sq_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Gradients of [`composite_loss_with_grad`] with respect to its inputs.
pub struct CompositeGrad {
    pub recon: Vec<Array1<f64>>,
    pub predicted_latent: Vec<Array1<f64>>,
    pub encoded_latent: Vec<Array1<f64>>,
}

/// The sequence loss from its ingredients: `targets[τ]` and `recon[τ]` are
/// frames in normalized units (τ = 0..T), `predicted_latent[τ] = K^τ g₀` and
/// `encoded_latent[τ]` the encodings of `targets[τ]`. Latent index 0 is
/// never read by the hidden term.
pub fn composite_loss(
    targets: &[Array1<f64>],
    recon: &[Array1<f64>],
    predicted_latent: &[Array1<f64>],
    encoded_latent: &[Array1<f64>],
    config: &LranConfig,
) -> f64 {
    composite_loss_with_grad(targets, recon, predicted_latent, encoded_latent, config).0
}

pub fn composite_loss_with_grad(
    targets: &[Array1<f64>],
    recon: &[Array1<f64>],
    predicted_latent: &[Array1<f64>],
    encoded_latent: &[Array1<f64>],
    config: &LranConfig,
) -> (f64, CompositeGrad) {
    let t = targets.len();
    let (w_rec, w_hid) = weights(config.delta, t);
    let mut loss = 0.0;
    let mut d_recon = Vec::with_capacity(t);
    for tau in 0..t {
        let diff = &recon[tau] - &targets[tau];
        let denom = sq_norm(&targets[tau]) + config.eps1;
        loss += w_rec[tau] * sq_norm(&diff) / denom;
        d_recon.push(diff * (2.0 * w_rec[tau] / denom));
    }
    let n = predicted_latent.first().map_or(0, |g| g.len());
    let mut d_pred = vec![Array1::zeros(n); t];
    let mut d_enc = vec![Array1::zeros(n); t];
    if config.beta > 0.0 {
        for tau in 1..t {
            let w = config.beta * w_hid[tau - 1];
            let g = &encoded_latent[tau];
            let diff = &predicted_latent[tau] - g;
            let e = sq_norm(&diff);
            let denom = sq_norm(g) + config.eps2;
            loss += w * e / denom;
            d_pred[tau] = &diff * (2.0 * w / denom);
            d_enc[tau] = &diff * (-2.0 * w / denom) - g * (2.0 * w * e / (denom * denom));
        }
    }
    (
        loss,
        CompositeGrad {
            recon: d_recon,
            predicted_latent: d_pred,
            encoded_latent: d_enc,
        },
    )
}

fn check_sequence(sequence: &[ScalarField<f64>], config: &LranConfig) -> Result<(), LranError> {
    if sequence.len() != config.sequence_length {
        return Err(LranError::BadSequence(format!(
            "expected {} frames, got {}",
            config.sequence_length,
            sequence.len()
        )));
    }
    if sequence.is_empty() {
        return Err(LranError::BadSequence("empty sequence".into()));
    }
    Ok(())
}

/// Loss of one sequence of physical-unit fields.
pub fn sequence_loss(model: &LranModel, sequence: &[ScalarField<f64>], config: &LranConfig) -> Result<f64, LranError> {
    check_sequence(sequence, config)?;
    let frames = sequence
        .iter()
        .map(|q| model.normalized_input(q))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Array2<f64>> = frames.iter().collect();
    Ok(batch_loss(model, &[refs], config, false).0)
}

/// Loss and parameter gradients of one sequence.
pub fn sequence_loss_and_grad(
    model: &LranModel,
    sequence: &[ScalarField<f64>],
    config: &LranConfig,
) -> Result<(f64, Vec<ArrayD<f64>>), LranError> {
    check_sequence(sequence, config)?;
    let frames = sequence
        .iter()
        .map(|q| model.normalized_input(q))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Array2<f64>> = frames.iter().collect();
    let (loss, grads) = batch_loss(model, &[refs], config, true);
    Ok((loss, grads.expect("gradients requested")))
}

/// Mean loss over sequences of normalized `[1, ny·nx]` frames, with
/// gradients when requested. Sequences are processed in order so results
/// are bit-reproducible.
pub(crate) fn batch_loss(
    model: &LranModel,
    sequences: &[Vec<&Array2<f64>>],
    config: &LranConfig,
    with_grad: bool,
) -> (f64, Option<Vec<ArrayD<f64>>>) {
    let k = model.k_matrix();
    let scale = 1.0 / sequences.len() as f64;
    let hidden = config.beta > 0.0;
    let mut total = 0.0;
    let mut grads = with_grad.then(|| model.zero_grads());
    let mut dk = Array2::<f64>::zeros(k.dim());

    for seq in sequences {
        let t = seq.len();
        let targets: Vec<Array1<f64>> = seq.iter().map(|f| f.row(0).to_owned()).collect();
        let mut enc_traces = Vec::new();
        let mut encoded = Vec::with_capacity(t);
        for (tau, frame) in seq.iter().enumerate() {
            if tau == 0 || hidden {
                let (g, tr) = model.encode_normalized(frame);
                encoded.push(g);
                enc_traces.push(tr);
            } else {
                encoded.push(Array1::zeros(model.latent_dim()));
            }
        }
        let mut predicted = Vec::with_capacity(t);
        predicted.push(encoded[0].clone());
        for tau in 1..t {
            let next = k.dot(&predicted[tau - 1]);
            predicted.push(next);
        }
        let mut recon = Vec::with_capacity(t);
        let mut dec_traces = Vec::with_capacity(t);
        for g in &predicted {
            let (out, tr) = model.decode_normalized(g);
            recon.push(out);
            dec_traces.push(tr);
        }
        let (loss, cg) = composite_loss_with_grad(&targets, &recon, &predicted, &encoded, config);
        total += loss * scale;

        let Some(grads) = grads.as_mut() else { continue };
        // Direct gradients on each predicted latent: decoder path plus the
        // hidden term.
        let mut direct: Vec<Array1<f64>> = Vec::with_capacity(t);
        for tau in 0..t {
            let dout = &cg.recon[tau] * scale;
            let mut d = model.decoder_backward(&dec_traces[tau], &dout, grads);
            d.scaled_add(scale, &cg.predicted_latent[tau]);
            direct.push(d);
        }
        // Reverse through ĝ_τ = K ĝ_{τ-1}.
        let mut carry = direct[t - 1].clone();
        for tau in (1..t).rev() {
            let outer = carry
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&predicted[tau - 1].view().insert_axis(ndarray::Axis(0)));
            dk += &outer;
            carry = &direct[tau - 1] + &k.t().dot(&carry);
        }
        model.encoder_backward(&enc_traces[0], &carry, grads);
        if hidden {
            for tau in 1..t {
                let dg = &cg.encoded_latent[tau] * scale;
                model.encoder_backward(&enc_traces[tau], &dg, grads);
            }
        }
    }
    if let Some(grads) = grads.as_mut() {
        let mut gk = mat_mut(&mut grads[KOOPMAN]);
        gk += &dk;
    }
    (total, grads)
}
