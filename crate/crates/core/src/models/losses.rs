//! Loss terms of the two generative models, as graph expressions.

use rand::Rng;

use crate::diffcore::{input_gradient_norm, BoundParams, DenseNet, Graph, Matrix, SeededRng, Var};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_column(g: &Graph, v: Var, what: &str) -> Result<usize> {
    let (m, c) = g.shape(v);
    if c != 1 || m == 0 {
        return Err(Error::Shape(format!(
            "{what} must be a nonempty column, got {m}×{c}"
        )));
    }
    Ok(m)
}

/// `(1/m) Σ (D(fake) − D(real))`.
pub fn wgan_critic_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let m = check_column(g, d_real, "critic scores")?;
    if check_column(g, d_fake, "critic scores")? != m {
        return Err(Error::Shape("real and fake batches differ in size".into()));
    }
    let diff = g.sub(d_fake, d_real);
    Ok(g.mean_all(diff))
}

/// `−(1/m) Σ D(fake)`.
pub fn wgan_generator_loss(g: &mut Graph, d_fake: Var) -> Result<Var> {
    check_column(g, d_fake, "critic scores")?;
    let mean = g.mean_all(d_fake);
    Ok(g.neg(mean))
}

/// `(λ/m) Σ (‖∇D(x̃)‖ − 1)²` at `x̃ = α·fake + (1 − α)·real`, one `α` per row.
/// Differentiable with respect to the critic parameters in `bound`.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &DenseNet,
    bound: &BoundParams,
    real: &Matrix,
    fake: &Matrix,
    lambda: f64,
    rng: &mut SeededRng,
) -> Result<Var> {
    if real.dim() != fake.dim() {
        return Err(Error::Shape("real and fake batches differ in shape".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("λ must be ≥ 0".into()));
    }
    let mut mixed = real.clone();
    for (mut row, f) in mixed.rows_mut().into_iter().zip(fake.rows()) {
        let alpha: f64 = rng.random();
        row.zip_mut_with(&f, |r, &f| *r = alpha * f + (1.0 - alpha) * *r);
    }
    let x = g.leaf(mixed);
    let norms = input_gradient_norm(g, critic, bound, x, true)?;
    let gap = g.add_scalar(norms, -1.0);
    let sq = g.square(gap);
    let mean = g.mean_all(sq);
    Ok(g.scale(mean, lambda))
}

/// Reconstruction cross-entropy `−(1/m) Σ x·log x̂` and
/// `(β/m) Σ ½ Σ_d (μ² + σ² − 1 − log σ²)`.
pub fn vae_losses(
    g: &mut Graph,
    x: &Matrix,
    x_hat: Var,
    mu: Var,
    logvar: Var,
    beta: f64,
) -> Result<(Var, Var)> {
    let (m, w) = g.shape(x_hat);
    if x.dim() != (m, w) || g.shape(mu) != g.shape(logvar) || g.shape(mu).0 != m || m == 0 {
        return Err(Error::Shape("VAE loss operands disagree in shape".into()));
    }
    let target = g.constant(x.clone());
    let log_hat = g.log(x_hat, LOG_FLOOR);
    let picked = g.mul(target, log_hat);
    let total = g.sum_all(picked);
    let recon = g.scale(total, -1.0 / m as f64);

    let mu_sq = g.square(mu);
    let var = g.exp(logvar);
    let a = g.add(mu_sq, var);
    let a = g.sub(a, logvar);
    let a = g.add_scalar(a, -1.0);
    let s = g.sum_all(a);
    let kl = g.scale(s, 0.5 * beta / m as f64);
    for v in [recon, kl] {
        if !g.scalar(v).is_finite() {
            return Err(Error::NonFinite("VAE loss".into()));
        }
    }
    Ok((recon, kl))
}

/// Scalar loss components of one step or epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub l_d: f64,
    pub l_g: f64,
    pub l_gp: f64,
    pub l_r: f64,
    pub l_kl: f64,
    pub r_bd: f64,
    pub r_ad: f64,
}

/// `L_d + L_g + L_GP + γ_BD·R_BD + γ_AD·R_AD`.
pub fn total_loss_wgan(c: &LossComponents, gamma_bd: f64, gamma_ad: f64) -> f64 {
    c.l_d + c.l_g + c.l_gp + gamma_bd * c.r_bd + gamma_ad * c.r_ad
}

/// `L_R + L_KL + γ_BD·R_BD + γ_AD·R_AD`.
pub fn total_loss_vae(c: &LossComponents, gamma_bd: f64, gamma_ad: f64) -> f64 {
    c.l_r + c.l_kl + gamma_bd * c.r_bd + gamma_ad * c.r_ad
}

/// `base + γ_BD·R_BD + γ_AD·R_AD` on the graph; absent terms are skipped.
pub fn add_regularizers(
    g: &mut Graph,
    base: Var,
    r_bd: Option<(f64, Var)>,
    r_ad: Option<(f64, Var)>,
) -> Var {
    let mut total = base;
    for (gamma, r) in [r_bd, r_ad].into_iter().flatten() {
        let term = g.scale(r, gamma);
        total = g.add(total, term);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{rng_from_seed, Activation, DenseNetSpec, Layer, OutputHead, Parameters};
    use ndarray::array;

    fn col(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Matrix::from_shape_vec((v.len(), 1), v.to_vec()).unwrap())
    }

    #[test]
    fn critic_and_generator_arithmetic() {
        let mut g = Graph::new();
        let real = col(&mut g, &[1.0, 1.0]);
        let fake = col(&mut g, &[0.0, 0.0]);
        let l = wgan_critic_loss(&mut g, real, fake).unwrap();
        assert_eq!(g.scalar(l), -1.0);
        let same = wgan_critic_loss(&mut g, real, real).unwrap();
        assert_eq!(g.scalar(same), 0.0);
        let half = col(&mut g, &[0.5]);
        let lg = wgan_generator_loss(&mut g, half).unwrap();
        assert_eq!(g.scalar(lg), -0.5);
        let one = col(&mut g, &[1.0]);
        let lg2 = wgan_generator_loss(&mut g, one).unwrap();
        assert_eq!(g.scalar(lg2), 2.0 * g.scalar(lg));
        let short = col(&mut g, &[1.0]);
        assert!(wgan_critic_loss(&mut g, real, short).is_err());
    }

    fn linear_critic(w: Matrix) -> DenseNet {
        let n = w.nrows();
        DenseNet::from_parts(
            DenseNetSpec::new(vec![n, 1], Activation::LEAKY, OutputHead::Linear).unwrap(),
            Parameters {
                layers: vec![Layer {
                    weight: w,
                    bias: array![[0.3]],
                }],
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn penalty_of_linear_critics() {
        let real = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let fake = array![[0.2, 0.5, 0.3], [0.1, 0.1, 0.8]];
        let mut rng = rng_from_seed(1);
        for (w, expected) in [
            (array![[0.6], [0.8], [0.0]], 0.0),
            (array![[0.0], [2.0], [0.0]], 10.0),
        ] {
            let critic = linear_critic(w);
            let mut g = Graph::new();
            let bound = critic.params.bind(&mut g);
            let gp =
                gradient_penalty(&mut g, &critic, &bound, &real, &fake, 10.0, &mut rng).unwrap();
            assert!((g.scalar(gp) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn vae_closed_forms() {
        let mut g = Graph::new();
        let x = array![[1.0, 0.0, 0.0, 1.0]];
        let x_hat = g.constant(x.clone());
        let mu = g.constant(array![[1.0]]);
        let lv = g.constant(array![[0.0]]);
        let (recon, kl) = vae_losses(&mut g, &x, x_hat, mu, lv, 1.0).unwrap();
        assert_eq!(g.scalar(recon), 0.0);
        assert_eq!(g.scalar(kl), 0.5);
        let zero = g.constant(array![[0.0, 0.0]]);
        let (_, kl0) = vae_losses(&mut g, &x, x_hat, zero, zero, 1.0).unwrap();
        assert_eq!(g.scalar(kl0), 0.0);
    }

    #[test]
    fn totals_are_linear_combinations() {
        let c = LossComponents {
            l_d: 1.0,
            l_g: 2.0,
            l_gp: 3.0,
            r_bd: 4.0,
            r_ad: -1.0,
            ..Default::default()
        };
        assert_eq!(total_loss_wgan(&c, 0.5, 0.0), 8.0);
        assert_eq!(total_loss_wgan(&c, 0.0, 0.0), 6.0);
        assert!(total_loss_wgan(&c, 0.0, 0.1) < total_loss_wgan(&c, 0.0, 0.0));
        let v = LossComponents {
            l_r: 1.5,
            l_kl: 0.5,
            r_bd: 2.0,
            ..Default::default()
        };
        assert_eq!(total_loss_vae(&v, 0.0, 0.0), 2.0);
        assert_eq!(total_loss_vae(&v, 1.0, 0.0), 4.0);
    }
}
