use rawscale_core::gradcheck::{finite_difference_check, Coords, Objective};
use rawscale_core::graph::Graph;
use rawscale_core::hfpm::{Hfpm, MapDirection};
use rawscale_core::lasdm::Lasdm;
use rawscale_core::params::{ModelParams, ParamLayout};
use rawscale_core::raw::sample_seed;
use rawscale_core::wrrd::valid_crop;
use rawscale_core::{
    dwt_pyramid, encode_pyramid, generate_synthetic_pair, location_map, model_downscale, parse_scale, HaarConvention,
    HfpmMode, LasdmMode, Model, ModelConfig, RationalScale, Shape, SynthOptions, Tensor,
};

const SCALES: [&str; 4] = ["1.3", "2", "3", "4"];

fn noise(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Tensor::from_fn(shape, |_, _, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

fn finite(t: &Tensor<f64>) -> bool {
    t.data().iter().all(|v| v.is_finite())
}

fn half() -> RationalScale {
    parse_scale("2").unwrap()
}

#[test]
fn parse_scale_examples() {
    for (text, n, m) in [("1.3", 10, 13), ("2", 1, 2), ("4/3", 3, 4), ("3", 1, 3), ("2.50", 2, 5)] {
        let s = parse_scale(text).unwrap();
        assert_eq!((s.n(), s.m()), (n, m), "{text}");
    }
    for bad in ["1", "0.5", "abc", "", "3/4", "-2", "nan"] {
        assert!(parse_scale(bad).unwrap_err().is_contract(), "{bad}");
    }
}

#[test]
fn encoder_shapes_for_every_depth() {
    let cfg = ModelConfig::tiny(4, 16);
    let model = Model::new(cfg, &[half()]).unwrap();
    let x = noise(Shape::new(4, 256, 256), 1);
    let pyr = encode_pyramid(&model, &model.init_params(3), &x).unwrap();
    let dims: Vec<_> = pyr.features.iter().map(|f| f.shape().as_array()).collect();
    assert_eq!(dims, [[16, 256, 256], [16, 128, 128], [16, 64, 64], [16, 32, 32]]);
    assert!(pyr.features.iter().all(finite));

    for k in 1..=5 {
        let model = Model::new(ModelConfig::tiny(k, 4), &[half()]).unwrap();
        let x = noise(Shape::new(4, 64, 32), k as u64);
        let pyr = encode_pyramid(&model, &model.init_params(k as u64), &x).unwrap();
        assert_eq!(pyr.features.len(), k);
        for (i, f) in pyr.features.iter().enumerate() {
            assert_eq!(f.shape(), Shape::new(4, 64 >> i, 32 >> i));
        }
    }
    let model = Model::new(ModelConfig::tiny(3, 4), &[half()]).unwrap();
    let bad = noise(Shape::new(4, 30, 32), 0);
    assert!(encode_pyramid(&model, &model.init_params(0), &bad).unwrap_err().is_contract());
}

fn lasdm_forward(
    cfg: &ModelConfig,
    scale: RationalScale,
    x: &Tensor<f64>,
    edit: impl FnOnce(&mut ModelParams<f64>),
) -> Tensor<f64> {
    let mut layout = ParamLayout::default();
    let lasdm = Lasdm::new(&mut layout, "l", cfg, scale).unwrap();
    let mut params = layout.init::<f64>(11, cfg.leaky_slope);
    edit(&mut params);
    let mut g = Graph::new();
    let p = params.bind(&mut g).unwrap();
    let xv = g.constant(x.clone()).unwrap();
    let y = lasdm.forward(&mut g, &p, xv, cfg.leaky_slope).unwrap();
    g.value(y).clone()
}

#[test]
fn lasdm_output_dims_for_standard_scales() {
    let cfg = ModelConfig::tiny(1, 4);
    let scale = parse_scale("1.3").unwrap();
    let mut layout = ParamLayout::default();
    let lasdm = Lasdm::new(&mut layout, "l", &cfg, scale).unwrap();
    let proj = lasdm.merge_proj().unwrap().spec;
    assert_eq!((proj.in_channels, proj.out_channels), (676, 400));
    assert_eq!(lasdm_forward(&cfg, scale, &noise(Shape::new(4, 26, 26), 2), |_| ()).shape(), Shape::new(4, 20, 20));
    for text in SCALES {
        let s = parse_scale(text).unwrap();
        let side = 2 * s.m();
        let y = lasdm_forward(&cfg, s, &noise(Shape::new(4, side, 3 * s.m()), 3), |_| ());
        assert_eq!(y.shape(), Shape::new(4, 2 * s.n(), 3 * s.n()), "{text}");
        assert!(finite(&y));
    }
    let mut layout = ParamLayout::default();
    let lasdm = Lasdm::new(&mut layout, "l", &cfg, half()).unwrap();
    let params = layout.init::<f64>(0, 0.2);
    let mut g = Graph::new();
    let p = params.bind(&mut g).unwrap();
    let odd = g.constant(noise(Shape::new(4, 5, 4), 1)).unwrap();
    assert!(lasdm.forward(&mut g, &p, odd, 0.2).unwrap_err().is_contract());
}

/// Identity ResBlocks and a block-averaging projection make LASDM an area
/// downscaler.
#[test]
fn lasdm_with_averaging_weights_is_area_mean() {
    let c = 3;
    let cfg = ModelConfig::tiny(1, c);
    let x = noise(Shape::new(c, 8, 12), 5);
    let y = lasdm_forward(&cfg, half(), &x, |p| {
        let names: Vec<String> = p.names().to_vec();
        for name in names.iter().filter(|n| n.contains(".conv2.")) {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let w = p.get_mut("l.merge_proj.w").unwrap();
        w.data_mut().fill(0.0);
        for o in 0..c {
            for k in 0..4 {
                w.set(o, 4 * o + k, 0, 0.25);
            }
        }
    });
    assert_eq!(y.shape(), Shape::new(c, 4, 6));
    let mut worst = 0.0f64;
    for ch in 0..c {
        for i in 0..4 {
            for j in 0..6 {
                let mean = (x.at(ch, 2 * i, 2 * j)
                    + x.at(ch, 2 * i, 2 * j + 1)
                    + x.at(ch, 2 * i + 1, 2 * j)
                    + x.at(ch, 2 * i + 1, 2 * j + 1))
                    / 4.0;
                worst = worst.max((y.at(ch, i, j) - mean).abs());
            }
        }
    }
    assert!(worst < 1e-14, "{worst}");
    let flat = lasdm_forward(&cfg, half(), &Tensor::full(Shape::new(c, 8, 8), 0.37), |p| {
        let names: Vec<String> = p.names().to_vec();
        for name in names.iter().filter(|n| n.contains(".conv2.")) {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let w = p.get_mut("l.merge_proj.w").unwrap();
        w.data_mut().fill(0.0);
        for o in 0..c {
            for k in 0..4 {
                w.set(o, 4 * o + k, 0, 0.25);
            }
        }
    });
    assert!(flat.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
}

#[test]
fn location_map_examples() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::from_rows(&[&[1.0, 0.0]]).unwrap()).unwrap();
    let k = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap()).unwrap();
    let m = location_map(&mut g, q, k, MapDirection::Horizontal, 1e-12).unwrap();
    let row = g.value(m).data().to_vec();
    let e = std::f64::consts::E;
    assert!((row[0] - e / (e + 1.0)).abs() < 1e-9 && (row[1] - 1.0 / (e + 1.0)).abs() < 1e-9);
    assert!((row[0] - 0.7311).abs() < 5e-5 && (row[1] - 0.2689).abs() < 5e-5);

    let q = g.constant(noise(Shape::new(2, 3, 5), 1)).unwrap();
    let same = Tensor::from_fn(Shape::new(2, 7, 5), |c, _, x| (c + x) as f64 - 1.5);
    let k = g.constant(same).unwrap();
    let m = location_map(&mut g, q, k, MapDirection::Horizontal, 1e-12).unwrap();
    assert_eq!(g.value(m).shape(), Shape::new(2, 3, 7));
    assert!(g.value(m).data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));

    let q = g.constant(noise(Shape::new(3, 6, 4), 2)).unwrap();
    let k = g.constant(noise(Shape::new(3, 6, 9), 3)).unwrap();
    let m = location_map(&mut g, q, k, MapDirection::Vertical, 1e-12).unwrap();
    let t = g.value(m);
    assert_eq!(t.shape(), Shape::new(3, 4, 9));
    for c in 0..3 {
        for r in 0..4 {
            let row: Vec<f64> = (0..9).map(|j| t.at(c, r, j)).collect();
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let k_bad = g.constant(noise(Shape::new(3, 5, 9), 3)).unwrap();
    assert!(location_map(&mut g, q, k_bad, MapDirection::Vertical, 1e-12).unwrap_err().is_contract());
}

struct HfpmCase {
    hfpm: Hfpm,
    params: ModelParams<f64>,
    a: Tensor<f64>,
    bands: [Tensor<f64>; 3],
    weights: [Tensor<f64>; 3],
}

impl HfpmCase {
    fn new(cfg: &ModelConfig, hr: usize, lr: usize, seed: u64) -> Self {
        let c = cfg.channels;
        let mut layout = ParamLayout::default();
        let hfpm = Hfpm::new(&mut layout, "h", cfg).unwrap();
        let params = layout.init::<f64>(seed, cfg.leaky_slope);
        let sh = Shape::new(c, hr, hr);
        let so = Shape::new(4, lr, lr);
        HfpmCase {
            hfpm,
            params,
            a: noise(Shape::new(c, lr, lr), seed + 1),
            bands: [noise(sh, seed + 2), noise(sh, seed + 3), noise(sh, seed + 4)],
            weights: [noise(so, seed + 5), noise(so, seed + 6), noise(so, seed + 7)],
        }
    }

    fn run(&self, grads: bool) -> (Graph<f64>, [Tensor<f64>; 3], f64, Vec<f64>) {
        let mut g = Graph::with_kink_tracking();
        let p = self.params.bind(&mut g).unwrap();
        let a = g.constant(self.a.clone()).unwrap();
        let [v, h, d] = self.bands.clone().map(|b| g.constant(b).unwrap());
        let out = self.hfpm.forward(&mut g, &p, a, [v, h, d], 0.2).unwrap();
        let outs = [out.v, out.h, out.d];
        let mut terms = Vec::new();
        for (o, w) in outs.iter().zip(&self.weights) {
            let wv = g.constant(w.clone()).unwrap();
            let prod = g.mul(*o, wv).unwrap();
            terms.push(g.sum(prod).unwrap());
        }
        let s = g.add(terms[0], terms[1]).unwrap();
        let loss = g.add(s, terms[2]).unwrap();
        let value = g.value(loss).item();
        let mut flat = Vec::new();
        if grads {
            let gr = g.backward(loss).unwrap();
            for (var, t) in p.vars().iter().zip(self.params.tensors()) {
                flat.extend_from_slice(gr.get_or_zeros(*var, t.shape()).data());
            }
        }
        let values = outs.map(|o| g.value(o).clone());
        (g, values, value, flat)
    }
}

impl Objective for HfpmCase {
    fn len(&self) -> usize {
        self.params.num_elements()
    }
    fn get(&self, i: usize) -> f64 {
        self.params.flat_get(i)
    }
    fn set(&mut self, i: usize, v: f64) {
        self.params.flat_set(i, v)
    }
    fn eval(&self) -> rawscale_core::Result<(f64, Option<u64>)> {
        let (g, _, value, _) = self.run(false);
        Ok((value, g.kink_signature()))
    }
    fn label(&self, i: usize) -> String {
        format!("param[{i}]")
    }
}

#[test]
fn hfpm_shapes_and_two_location_maps() {
    let case = HfpmCase::new(&ModelConfig::tiny(1, 8), 32, 16, 1);
    let (g, outs, _, _) = case.run(false);
    for o in &outs {
        assert_eq!(o.shape(), Shape::new(4, 16, 16));
        assert!(finite(o));
    }
    assert_eq!(g.stats().location_maps, 2);

    let cfg = ModelConfig { hfpm: HfpmMode::CnnBilinear, ..ModelConfig::tiny(1, 8) };
    let case = HfpmCase::new(&cfg, 32, 16, 1);
    let (g, outs, _, _) = case.run(false);
    assert!(outs.iter().all(|o| o.shape() == Shape::new(4, 16, 16)));
    assert_eq!(g.stats().location_maps, 0);
}

#[test]
fn hfpm_zero_bands_give_head_biases() {
    let mut case = HfpmCase::new(&ModelConfig::tiny(1, 4), 12, 6, 9);
    case.bands = [0, 1, 2].map(|_| Tensor::zeros(Shape::new(4, 12, 12)));
    for (i, tag) in ["v", "h", "d"].iter().enumerate() {
        case.params.get_mut(&format!("h.{tag}.residual.w")).unwrap().data_mut().fill(0.0);
        let b = case.params.get_mut(&format!("h.{tag}.out.b")).unwrap();
        for (ch, v) in b.data_mut().iter_mut().enumerate() {
            *v = 0.1 * (i * 4 + ch) as f64 - 0.3;
        }
    }
    let (_, outs, _, _) = case.run(false);
    for (i, o) in outs.iter().enumerate() {
        for ch in 0..4 {
            let want = 0.1 * (i * 4 + ch) as f64 - 0.3;
            assert!(o.channel(ch).iter().all(|&v| (v - want).abs() < 1e-15), "band {i} channel {ch}");
        }
    }
}

#[test]
fn hfpm_gradients_match_finite_differences() {
    let mut case = HfpmCase::new(&ModelConfig::tiny(1, 2), 8, 4, 21);
    let (_, _, _, analytic) = case.run(true);
    let report = finite_difference_check("hfpm", &mut case, &analytic, Coords::All, 1e-6, 1e-6, 1e-4, 1.0).unwrap();
    assert!(report.checked() > analytic.len() * 9 / 10, "too many kinks: {}", report.skipped_kinks);
    assert!(report.ok(), "worst {:?}", report.worst());
}

#[test]
fn shape_chain_matches_reference_pyramid_for_every_scale() {
    let cfg = ModelConfig::tiny(4, 4);
    let scales: Vec<RationalScale> = SCALES.iter().map(|s| parse_scale(s).unwrap()).collect();
    let model = Model::new(cfg.clone(), &scales).unwrap();
    let params = model.init_params::<f64>(4);
    for scale in scales {
        let (h, w, _, _) = valid_crop(208, 208, cfg.required_multiple(scale), 1).unwrap();
        let x = noise(Shape::new(4, h, w), 8);
        let (out, levels) = model_downscale(&model, &params, &x, scale).unwrap();
        let (lh, lw) = (scale.apply(h).unwrap(), scale.apply(w).unwrap());
        assert_eq!(out.shape(), Shape::new(4, lh, lw), "{scale}");
        let reference =
            dwt_pyramid(&Tensor::<f64>::zeros(Shape::new(4, lh, lw)), 4, HaarConvention::Orthonormal).unwrap();
        for st in &levels {
            let want = reference.level(st.level).a.shape();
            for band in st.coeffs.all() {
                assert_eq!(band.shape(), want, "{scale} level {}", st.level);
            }
            assert_eq!(st.z.shape(), Shape::new(4, want.h, want.w));
        }
        assert!(finite(&out));
    }
}

#[test]
fn k4_half_scale_level_dims() {
    let model = Model::new(ModelConfig::tiny(4, 4), &[half()]).unwrap();
    let (out, levels) =
        model_downscale(&model, &model.init_params::<f64>(2), &noise(Shape::new(4, 256, 256), 3), half()).unwrap();
    assert_eq!(out.shape(), Shape::new(4, 128, 128));
    assert_eq!(levels[3].coeffs.a.shape(), Shape::new(4, 8, 8));
    assert_eq!(levels[0].coeffs.a.shape(), Shape::new(4, 64, 64));
}

#[test]
fn oracle_coefficients_reconstruct_reference_exactly() {
    let scale = half();
    for conv in [HaarConvention::Orthonormal, HaarConvention::Average] {
        for k in 1..=3 {
            let cfg = ModelConfig { wavelet: conv, ..ModelConfig::tiny(k, 4) };
            let model = Model::new(cfg, &[scale]).unwrap();
            let params = model.init_params::<f64>(1);
            let side = 2 * (1 << k) * 3;
            let pair = generate_synthetic_pair(sample_seed(7, k as u64), (side, side), scale, &SynthOptions::default())
                .unwrap();
            let (hr, lr) = (pair.hr.tensor().cast::<f64>(), pair.lr.tensor().cast::<f64>());
            let oracle = dwt_pyramid(&lr, k, conv).unwrap();
            let mut g = Graph::new();
            let p = params.bind(&mut g).unwrap();
            let x = g.constant(hr).unwrap();
            let vars = model.forward(&mut g, &p, x, scale, Some(&oracle)).unwrap();
            assert!(g.value(vars.output).max_abs_diff(&lr) <= 1e-12, "{conv:?} K={k}");
            assert_eq!(g.stats().location_maps, 2 * k);
        }
    }
}

#[test]
fn forward_is_deterministic_and_finite() {
    let model = Model::new(ModelConfig::tiny(2, 4), &[half()]).unwrap();
    let params = model.init_params::<f64>(5);
    let x = noise(Shape::new(4, 32, 32), 6);
    let (a, la) = model_downscale(&model, &params, &x, half()).unwrap();
    let (b, lb) = model_downscale(&model, &params, &x, half()).unwrap();
    assert!(a.bit_eq(&b));
    assert!(la.iter().zip(&lb).all(|(p, q)| p.out.bit_eq(&q.out)));
    let x32 = x.cast::<f32>();
    let p32 = model.init_params::<f32>(5);
    let (c, _) = model_downscale(&model, &p32, &x32, half()).unwrap();
    let (d, _) = model_downscale(&model, &p32, &x32, half()).unwrap();
    assert!(c.bit_eq(&d));
    assert_eq!(model.init_params::<f32>(5), p32);

    for seed in 0..100 {
        let params = model.init_params::<f32>(seed);
        let x = noise(Shape::new(4, 32, 32), 1000 + seed).map(|v| v + 0.5).cast::<f32>();
        let (out, _) = model_downscale(&model, &params, &x, half()).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()), "seed {seed}");
    }
}

#[test]
fn ablations_keep_io_contract() {
    let x = noise(Shape::new(4, 24, 24), 4);
    let scale = parse_scale("3").unwrap();
    let base = ModelConfig::tiny(1, 4);
    let variants = [
        base.clone(),
        ModelConfig { lasdm: LasdmMode::Bilinear, ..base.clone() },
        ModelConfig { hfpm: HfpmMode::CnnBilinear, ..base.clone() },
        ModelConfig { lasdm: LasdmMode::Bilinear, hfpm: HfpmMode::CnnBilinear, ..base },
    ];
    let mut outputs = Vec::new();
    for cfg in variants {
        let model = Model::new(cfg.clone(), &[scale]).unwrap();
        let params = model.init_params::<f64>(2);
        let has_proj = params.names().iter().any(|n| n.contains("merge_proj"));
        let has_attn = params.names().iter().any(|n| n.contains("query_h"));
        assert_eq!(has_proj, cfg.lasdm == LasdmMode::Learned);
        assert_eq!(has_attn, cfg.hfpm == HfpmMode::Learned);
        let (out, _) = model_downscale(&model, &params, &x, scale).unwrap();
        assert_eq!(out.shape(), Shape::new(4, 8, 8));
        assert!(finite(&out));
        outputs.push(out);
    }
    assert!(outputs[0].max_abs_diff(&outputs[1]) > 0.0);
    assert!(outputs[0].max_abs_diff(&outputs[2]) > 0.0);
}

#[test]
fn contract_errors() {
    let model = Model::new(ModelConfig::tiny(2, 4), &[half()]).unwrap();
    let params = model.init_params::<f64>(0);
    let third = parse_scale("3").unwrap();
    let err = model_downscale(&model, &params, &noise(Shape::new(4, 24, 24), 0), third).unwrap_err();
    assert!(err.is_contract() && err.to_string().contains("no LASDM"));
    let err = model_downscale(&model, &params, &noise(Shape::new(4, 20, 20), 0), half()).unwrap_err();
    assert!(err.is_contract() && err.to_string().contains("crop-valid"));
    let other = Model::new(ModelConfig::tiny(2, 2), &[half()]).unwrap();
    assert!(model_downscale(&other, &params, &noise(Shape::new(4, 16, 16), 0), half()).is_err());
    for bad in [ModelConfig::tiny(0, 4), ModelConfig::tiny(6, 4), ModelConfig::tiny(2, 0)] {
        assert!(Model::new(bad, &[half()]).unwrap_err().is_contract());
    }
    assert!(Model::new(ModelConfig::tiny(2, 4), &[]).is_err());
}
