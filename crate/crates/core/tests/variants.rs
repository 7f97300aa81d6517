mod common;

use common::*;
use objcomp::diffusion::*;
use objcomp::encoder::Encoder;
use objcomp::graph::ParamKey;
use objcomp::Tensor;

fn outputs(cfg: &DenoiserConfig, seed: u64) -> Vec<Vec<f64>> {
    let n = cfg.image_size;
    let mut r = rng(seed);
    let enc = Encoder::<f64>::new(tiny_encoder(n, cfg.cond_dim), 1).unwrap();
    let ex = random_composite::<f64>(n, &mut r);
    let cond = enc.adapt(&enc.encode_tokens(&ex.object_image).unwrap()).unwrap().tokens;
    let x_t = Tensor::randn(&[3, n, n], 1.0, &mut r);
    let base = Denoiser::<f64>::new(cfg.clone(), seed).unwrap();
    [Variant::CrossAttention, Variant::Concat, Variant::ControlNet]
        .into_iter()
        .map(|v| {
            let model = if v == Variant::CrossAttention {
                base.clone()
            } else {
                Denoiser::new(cfg.clone().with_variant(v), seed).unwrap()
            };
            let ctx = SpatialContext::for_composite(&ex.background, &ex.mask, &ex.object_image, &ex.object_mask, v).unwrap();
            let input = assemble_denoiser_input(&x_t, &ctx, v).unwrap();
            model.predict_eps(&input, 417, &cond).unwrap().into_data()
        })
        .collect()
}

#[test]
fn zero_initialized_variants_reproduce_base_output() {
    let small = tiny_denoiser(8, Variant::CrossAttention);
    let wider = DenoiserConfig {
        image_size: 16,
        base_channels: 8,
        channel_multipliers: vec![1, 2, 2],
        attn_resolutions: vec![8, 4],
        cond_dim: 4,
        ..DenoiserConfig::default()
    };
    for cfg in [small, wider] {
        for seed in 0..3 {
            let outs = outputs(&cfg, seed);
            assert!(outs[0].iter().any(|&v| v != 0.0));
            assert_eq!(outs[0], outs[1], "concat differs from base");
            assert_eq!(outs[0], outs[2], "controlnet differs from base");
        }
    }
}

#[test]
fn zero_initialized_weights_receive_gradient() {
    let schedule = make_schedule(100).unwrap();
    let mut r = rng(4);
    let batch: Vec<_> = (0..2).map(|_| random_composite::<f64>(8, &mut r)).collect();
    let enc = Encoder::<f64>::new(tiny_encoder(8, 4), 1).unwrap();
    // columns of the widened input conv that see the extra channels
    let extra = |g: &Tensor<f64>| -> Vec<f64> { g.data().chunks(90).flat_map(|row| row[63..].to_vec()).collect() };
    let all = |g: &Tensor<f64>| g.data().to_vec();
    type Pick<'a> = &'a dyn Fn(&Tensor<f64>) -> Vec<f64>;
    let cases: [(Variant, &str, Pick); 2] =
        [(Variant::Concat, "conv_in.w", &extra), (Variant::ControlNet, "ctrl.proj0.w", &all)];
    for (v, name, pick) in cases {
        let den = Denoiser::<f64>::new(tiny_denoiser(8, v), 2).unwrap();
        let out = loss_comp(&batch, &den, &enc, &schedule, LossOptions::new(0.0, 3)).unwrap();
        let id = den.params().find(name).unwrap();
        let g = &out.grads.map[&ParamKey {
            store: den.params().tag(),
            index: id.0,
        }];
        assert!(pick(g).iter().any(|&x| x != 0.0), "{name} has no gradient");
    }
}
