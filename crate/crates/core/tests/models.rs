use popsynth::data::{build_index, AttributeSchema, Record};
use popsynth::diffcore::gradcheck::{central_difference, check_param_gradients, relative_error};
use popsynth::diffcore::{
    rng_from_seed, standard_normal_with, Activation, DenseNet, DenseNetSpec, Graph, Matrix,
    OutputHead, Var,
};
use popsynth::embedder::{train_embedder, EmbedderSpec};
use popsynth::geometry::{r_ad, r_bd, ReferenceSet, Space};
use popsynth::models::{
    generate, generate_relaxed, gradient_penalty, train, vae_losses, wgan_critic_loss,
    wgan_generator_loss, ModelKind, TrainConfig,
};
use popsynth::Result;
use rand::Rng;

fn input_grad_error<F>(x: &Matrix, f: F) -> f64
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v).unwrap();
    let analytic = g.grad_values(out, &[v]).unwrap().remove(0);
    let numeric = central_difference(x, 1e-6, |probe| {
        let mut g = Graph::new();
        let v = g.leaf(probe.clone());
        let out = f(&mut g, v)?;
        Ok(g.scalar(out))
    })
    .unwrap();
    relative_error(&analytic, &numeric)
}

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    standard_normal_with(rows, cols, &mut rng_from_seed(seed))
}

fn schema() -> AttributeSchema {
    AttributeSchema::from_cardinalities(&[3, 2, 4]).unwrap()
}

fn toy_sample(n: usize, seed: u64) -> Vec<Record> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..3u16);
            let b = if rng.random::<f64>() < 0.8 {
                a % 2
            } else {
                1 - a % 2
            };
            Record::new(vec![a, b, rng.random_range(0..4u16)])
        })
        .collect()
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        epochs: 3,
        lr: 1e-3,
        hidden: vec![12],
        latent_dim: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn wgan_losses_match_finite_differences() {
    let d = random(6, 1, 1);
    assert!(
        input_grad_error(&d, |g, v| {
            let fake = g.constant(random(6, 1, 2));
            wgan_critic_loss(g, v, fake)
        }) < 1e-4
    );
    assert!(
        input_grad_error(&d, |g, v| {
            let real = g.constant(random(6, 1, 3));
            wgan_critic_loss(g, real, v)
        }) < 1e-4
    );
    assert!(input_grad_error(&d, |g, v| wgan_generator_loss(g, v)) < 1e-4);
}

#[test]
fn vae_losses_match_finite_differences() {
    let blocks = [3, 2, 4];
    let x = popsynth::data::encode(&toy_sample(5, 4), &schema())
        .unwrap()
        .into_values();
    let logits = random(5, 9, 5);
    let mu = random(5, 3, 6);
    let logvar = random(5, 3, 7) * 0.5;
    let recon = |g: &mut Graph, v: Var| {
        let p = g.block_softmax(v, &blocks);
        let mu = g.constant(mu.clone());
        let lv = g.constant(logvar.clone());
        Ok(vae_losses(g, &x, p, mu, lv, 1.0)?.0)
    };
    assert!(input_grad_error(&logits, recon) < 1e-4);
    let p = popsynth::diffcore::block_softmax(&logits, &blocks);
    let kl_mu = |g: &mut Graph, v: Var| {
        let ph = g.constant(p.clone());
        let lv = g.constant(logvar.clone());
        Ok(vae_losses(g, &x, ph, v, lv, 0.7)?.1)
    };
    assert!(input_grad_error(&mu, kl_mu) < 1e-4);
    let kl_lv = |g: &mut Graph, v: Var| {
        let ph = g.constant(p.clone());
        let m = g.constant(mu.clone());
        Ok(vae_losses(g, &x, ph, m, v, 0.7)?.1)
    };
    assert!(input_grad_error(&logvar, kl_lv) < 1e-4);
}

#[test]
fn gradient_penalty_parameter_gradients_match() {
    let spec = DenseNetSpec::new(vec![9, 8, 8, 1], Activation::Tanh, OutputHead::Linear).unwrap();
    let critic = DenseNet::new(spec, 3).unwrap();
    let real = random(4, 9, 8);
    let fake = random(4, 9, 9);
    let err = check_param_gradients(&critic, 1e-6, |g, net, bound| {
        let mut rng = rng_from_seed(10);
        gradient_penalty(g, net, bound, &real, &fake, 10.0, &mut rng)
    })
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn regularized_generator_objective_matches_finite_differences() {
    let blocks = vec![3, 2, 4];
    let spec = DenseNetSpec::new(
        vec![4, 10, 9],
        Activation::Tanh,
        OutputHead::BlockSoftmax(blocks),
    )
    .unwrap();
    let generator = DenseNet::new(spec, 5).unwrap();
    let critic = DenseNet::new(
        DenseNetSpec::new(vec![9, 6, 1], Activation::Tanh, OutputHead::Linear).unwrap(),
        6,
    )
    .unwrap();
    let reference = ReferenceSet::from_records(&toy_sample(40, 1), &schema()).unwrap();
    let z = random(6, 4, 11);
    let err = check_param_gradients(&generator, 1e-6, |g, net, bound| {
        let zv = g.constant(z.clone());
        let fake = net.forward(g, bound, zv)?;
        let cb = critic.params.bind_frozen(g);
        let d = critic.forward(g, &cb, fake)?;
        let lg = wgan_generator_loss(g, d)?;
        let bd = r_bd(g, fake, &reference)?;
        let ad = r_ad(g, fake, &reference)?;
        let t = popsynth::models::losses::add_regularizers(g, lg, Some((0.7, bd)), Some((0.3, ad)));
        Ok(t)
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let sample = toy_sample(150, 2);
    for kind in [ModelKind::Wgan, ModelKind::Vae] {
        let cfg = TrainConfig {
            gamma_bd: 0.2,
            gamma_ad: 0.1,
            ..small_config(3)
        };
        let a = train(kind, &sample, &schema(), &cfg, None).unwrap();
        let b = train(kind, &sample, &schema(), &cfg, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let other = train(kind, &sample, &schema(), &small_config(4), None).unwrap();
        assert_ne!(a.generator.params, other.generator.params);
    }
}

#[test]
fn zero_weights_ignore_space_and_reference() {
    let sample = toy_sample(150, 5);
    let (embedder, _) = train_embedder(
        &popsynth::data::encode(&sample, &schema()).unwrap(),
        &schema(),
        &EmbedderSpec {
            dim: 3,
            epochs: 2,
            seed: 1,
            ..EmbedderSpec::default()
        },
    )
    .unwrap();
    for kind in [ModelKind::Wgan, ModelKind::Vae] {
        let base = train(kind, &sample, &schema(), &small_config(8), None).unwrap();
        let embedded = TrainConfig {
            space: Space::Embedded,
            ..small_config(8)
        };
        let e = train(kind, &sample, &schema(), &embedded, Some(&embedder)).unwrap();
        let sub = TrainConfig {
            ref_subsample: Some(20),
            ..small_config(8)
        };
        let s = train(kind, &sample, &schema(), &sub, None).unwrap();
        assert_eq!(base.generator.params, e.generator.params);
        assert_eq!(base.companion.params, e.companion.params);
        assert_eq!(base.generator.params, s.generator.params);
        for (x, y) in base.history.iter().zip(&e.history) {
            assert_eq!((x.l_d, x.l_g, x.l_r, x.l_kl), (y.l_d, y.l_g, y.l_r, y.l_kl));
        }
    }
}

#[test]
fn embedded_space_needs_an_embedder() {
    let cfg = TrainConfig {
        space: Space::Embedded,
        gamma_bd: 1.0,
        ..small_config(1)
    };
    assert!(train(ModelKind::Wgan, &toy_sample(50, 1), &schema(), &cfg, None).is_err());
}

#[test]
fn generation_contract() {
    let sample = toy_sample(120, 6);
    for kind in [ModelKind::Wgan, ModelKind::Vae] {
        let art = train(kind, &sample, &schema(), &small_config(2), None).unwrap();
        assert!(generate(&art, 0, 1).is_err());
        let out = generate(&art, 500, 9).unwrap();
        assert_eq!(out.len(), 500);
        schema().validate_records(&out).unwrap();
        assert_eq!(out, generate(&art, 500, 9).unwrap());
        assert_eq!(out[..50], generate(&art, 50, 9).unwrap()[..]);
        let relaxed = generate_relaxed(&art, 20, 9).unwrap();
        for row in relaxed.rows() {
            let mut off = 0;
            for b in [3, 2, 4] {
                let s: f64 = row.slice(ndarray::s![off..off + b]).sum();
                assert!((s - 1.0).abs() < 1e-9);
                off += b;
            }
        }
        assert!(build_index(&out, &schema()).unwrap().unique_count() > 1);
    }
}

#[test]
fn history_has_one_row_per_epoch() {
    let sample = toy_sample(100, 7);
    let art = train(ModelKind::Wgan, &sample, &schema(), &small_config(5), None).unwrap();
    assert_eq!(art.history.len(), 3);
    assert!(art
        .history
        .iter()
        .all(|h| h.is_finite() && h.l_kl.is_none() && h.l_gp.is_some()));
    let mut buf = Vec::new();
    art.write_history_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,L_d,L_g,L_GP,L_R,L_KL,R_BD,R_AD"
    );
    assert_eq!(lines.count(), 3);

    let vae = train(ModelKind::Vae, &sample, &schema(), &small_config(5), None).unwrap();
    assert!(vae
        .history
        .iter()
        .all(|h| h.l_r.is_some() && h.l_kl.is_some() && h.l_d.is_none()));
}

#[test]
fn artifacts_round_trip_through_files() {
    let sample = toy_sample(100, 8);
    let art = train(ModelKind::Vae, &sample, &schema(), &small_config(6), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    art.save(&path).unwrap();
    let back = popsynth::models::ModelArtifact::load(&path).unwrap();
    let (a, b) = (
        generate_relaxed(&art, 30, 2).unwrap(),
        generate_relaxed(&back, 30, 2).unwrap(),
    );
    assert!((a - b).iter().all(|d| d.abs() <= 1e-15));
}

#[test]
fn vae_reconstruction_improves() {
    let sample = toy_sample(400, 9);
    let cfg = TrainConfig {
        epochs: 30,
        ..small_config(1)
    };
    let art = train(ModelKind::Vae, &sample, &schema(), &cfg, None).unwrap();
    let first = art.history[0].l_r.unwrap();
    let last = art.history.last().unwrap().l_r.unwrap();
    assert!(last < first, "{first} -> {last}");
}
