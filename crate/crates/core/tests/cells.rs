mod common;

use cloudcast_core::cells::{
    cbam, cbam_convlstm_step, cbam_with_maps, convlstm_step, sa_convlstm_step,
    self_attention_aggregate, CbamConvLstmParams, CbamParams, CellKind, CellState,
    CloudArchitecture, CloudNet, ConvLstmParams, SaConvLstmParams, SaMemoryParams,
};
use cloudcast_core::gradcheck::gradcheck_many;
use cloudcast_core::{Bound, Graph, Initializer, ParamSet, Tensor, Var};
use common::oracles::{self, Dims, Weights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

/// Perturbs every parameter so biases are non-zero as well.
fn jitter(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

struct Case {
    params: ParamSet<f64>,
    x: Tensor<f64>,
    h: Tensor<f64>,
    c: Tensor<f64>,
    m: Tensor<f64>,
}

fn case(seed: u64, dims: Dims, register: impl FnOnce(&mut ParamSet<f64>, &mut Initializer)) -> Case {
    let mut params = ParamSet::new();
    let mut init = Initializer::new(seed);
    register(&mut params, &mut init);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    jitter(&mut params, &mut rng);
    let state = [dims.hidden, dims.h, dims.w];
    Case {
        x: random(&mut rng, &[dims.input, dims.h, dims.w], 1.0),
        h: random(&mut rng, &state, 0.9),
        c: random(&mut rng, &state, 1.5),
        m: random(&mut rng, &state, 1.5),
        params,
    }
}

fn state_of(g: &mut Graph<f64>, c: &Case) -> CellState {
    CellState {
        h: g.constant(c.h.clone()),
        c: g.constant(c.c.clone()),
        m: Some(g.constant(c.m.clone())),
    }
}

const DIMS: Dims = Dims {
    input: 2,
    hidden: 3,
    h: 4,
    w: 5,
    k: 3,
};

#[test]
fn convlstm_zero_params_halves_cell() {
    let mut c = case(1, DIMS, |p, i| {
        ConvLstmParams::register(p, i, "l", 2, 3, 3).unwrap();
    });
    for t in c.params.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let p = ConvLstmParams::register(&mut ParamSet::<f64>::new(), &mut Initializer::new(0), "l", 2, 3, 3).unwrap();
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    for (j, &c0) in c.c.data().iter().enumerate() {
        assert_eq!(g.value(out.c).data()[j], 0.5 * c0);
        assert_eq!(g.value(out.h).data()[j], 0.5 * (0.5 * c0).tanh());
    }
}

#[test]
fn convlstm_all_zero_stays_zero() {
    let mut params = ParamSet::<f64>::new();
    let p = ConvLstmParams::register(&mut params, &mut Initializer::new(0), "l", 1, 2, 3).unwrap();
    params.zero_prefix("");
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant(Tensor::zeros([1, 3, 3]));
    let s = CellState::zeros(&mut g, 2, 3, 3, false);
    let out = convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    assert!(g.value(out.h).data().iter().all(|&v| v == 0.0));
    assert!(g.value(out.c).data().iter().all(|&v| v == 0.0));
}

#[test]
fn convlstm_rejects_mismatched_state() {
    let mut params = ParamSet::<f64>::new();
    let p = ConvLstmParams::register(&mut params, &mut Initializer::new(0), "l", 1, 2, 3).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant(Tensor::zeros([1, 3, 3]));
    let s = CellState::zeros(&mut g, 2, 4, 3, false);
    assert!(convlstm_step(&mut g, &bound, &p, x, &s).is_err());
    let x = g.constant(Tensor::zeros([2, 4, 3]));
    assert!(convlstm_step(&mut g, &bound, &p, x, &s).is_err());
}

fn check_convlstm(seed: u64, dims: Dims) -> f64 {
    let c = case(seed, dims, |p, i| {
        ConvLstmParams::register(p, i, "l", dims.input, dims.hidden, dims.k).unwrap();
    });
    let p = ConvLstmParams::register(&mut ParamSet::<f64>::new(), &mut Initializer::new(0), "l", dims.input, dims.hidden, dims.k)
        .unwrap();
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    let (h, cc) = oracles::convlstm(&Weights::of(&c.params), "l", dims, c.x.data(), c.h.data(), c.c.data());
    oracles::max_diff(g.value(out.h).data(), &h).max(oracles::max_diff(g.value(out.c).data(), &cc))
}

#[test]
fn cbam_constant_map_output_factorizes() {
    let mut params = ParamSet::<f64>::new();
    let p = CbamParams::register(&mut params, &mut Initializer::new(3), "a", 3, 4, 7).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let f = g.constant(Tensor::full([3, 5, 5], 0.7));
    let maps = cbam_with_maps(&mut g, &bound, &p, f).unwrap();
    let out = g.value(maps.output).data();
    let ratio = out[0] / 0.7;
    assert!(ratio > 0.0 && ratio < 1.0);
    let mc = g.value(maps.channel).data();
    assert!(mc.iter().all(|&v| v > 0.0 && v < 1.0));
    let ms = g.value(maps.spatial).data();
    for ch in 0..3 {
        for px in 0..25 {
            let expect = 0.7 * mc[ch] * ms[px];
            assert!((out[ch * 25 + px] - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn cbam_constant_map_with_unit_spatial_kernel_has_single_factor() {
    let mut params = ParamSet::<f64>::new();
    let p = CbamParams::register(&mut params, &mut Initializer::new(3), "a", 3, 1, 1).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let f = g.constant(Tensor::full([3, 4, 4], 0.7));
    let out = cbam(&mut g, &bound, &p, f).unwrap();
    let out = g.value(out).data();
    // channels get their own channel weight, pixels a shared spatial one
    let ratios: Vec<f64> = out.iter().map(|v| v / 0.7).collect();
    for ch in 0..3 {
        let first = ratios[ch * 16];
        assert!(first > 0.0 && first < 1.0);
        assert!(ratios[ch * 16..(ch + 1) * 16].iter().all(|&r| (r - first).abs() < 1e-15));
    }
}

#[test]
fn cbam_duplicate_channels_stay_duplicates() {
    let mut params = ParamSet::<f64>::new();
    let p = CbamParams::register(&mut params, &mut Initializer::new(5), "a", 2, 1, 3).unwrap();
    // a symmetric MLP treats the two channels identically
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a: f64 = rng.gen_range(-1.0..1.0);
    let b: f64 = rng.gen_range(-1.0..1.0);
    *params.get_mut(params.id("a.mlp_w1").unwrap()) = Tensor::from_f64([2, 2], &[a, b, b, a]).unwrap();
    *params.get_mut(params.id("a.mlp_w2").unwrap()) = Tensor::from_f64([2, 2], &[b, a, a, b]).unwrap();
    let plane = random(&mut rng, &[1, 4, 4], 1.0);
    let doubled: Vec<f64> = plane.data().iter().chain(plane.data()).copied().collect();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let f = g.constant(Tensor::new([2, 4, 4], doubled).unwrap());
    let maps = cbam_with_maps(&mut g, &bound, &p, f).unwrap();
    let mc = g.value(maps.channel).data();
    assert_eq!(mc[0], mc[1]);
    let out = g.value(maps.output).data();
    assert_eq!(&out[..16], &out[16..]);
}

#[test]
fn cbam_matches_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..10 {
        let mut params = ParamSet::<f64>::new();
        let p = CbamParams::register(&mut params, &mut Initializer::new(seed), "a", 3, 2, 3).unwrap();
        jitter(&mut params, &mut rng);
        let f = random(&mut rng, &[3, 4, 4], 1.0);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let fv = g.constant(f.clone());
        let out = cbam(&mut g, &bound, &p, fv).unwrap();
        let expect = oracles::cbam(&Weights::of(&params), "a", f.data(), 3, 4, 4);
        assert!(oracles::max_diff(g.value(out).data(), &expect) < 1e-12);
    }
}

fn cbam_cell(seed: u64, dims: Dims) -> (Case, CbamConvLstmParams) {
    let mut layout = None;
    let c = case(seed, dims, |p, i| {
        layout = Some(CbamConvLstmParams::register(p, i, "l", dims.input, dims.hidden, dims.k, 2, 3).unwrap());
    });
    (c, layout.unwrap())
}

#[test]
fn cbam_cell_with_identity_hook_is_convlstm() {
    let (c, mut p) = cbam_cell(11, DIMS);
    p.identity_attention = true;
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let a = cbam_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    let b = convlstm_step(&mut g, &bound, &p.base, x, &s).unwrap();
    assert_eq!(g.value(a.h), g.value(b.h));
    assert_eq!(g.value(a.c), g.value(b.c));
}

#[test]
fn cbam_cell_zero_gate_params_give_half_gates() {
    let (mut c, p) = cbam_cell(12, DIMS);
    for gate in ["i", "o", "f", "c"] {
        for suffix in [format!("w_{gate}h"), format!("w_{gate}x"), format!("b_{gate}")] {
            let id = c.params.id(&format!("l.{suffix}")).unwrap();
            c.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = cbam_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    for (j, &c0) in c.c.data().iter().enumerate() {
        assert_eq!(g.value(out.c).data()[j], 0.5 * c0);
    }
}

fn check_cbam_cell(seed: u64, dims: Dims) -> f64 {
    let (c, p) = cbam_cell(seed, dims);
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = cbam_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    let (h, cc) = oracles::cbam_convlstm(&Weights::of(&c.params), "l", dims, c.x.data(), c.h.data(), c.c.data());
    oracles::max_diff(g.value(out.h).data(), &h).max(oracles::max_diff(g.value(out.c).data(), &cc))
}

fn memory(seed: u64, c: usize, k: usize, d: usize) -> (ParamSet<f64>, SaMemoryParams) {
    let mut params = ParamSet::new();
    let p = SaMemoryParams::register(&mut params, &mut Initializer::new(seed), "s", c, k, d).unwrap();
    jitter(&mut params, &mut ChaCha8Rng::seed_from_u64(seed + 100));
    (params, p)
}

#[test]
fn attention_on_constant_maps_is_uniform() {
    let (params, p) = memory(2, 2, 3, 1);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let h = g.constant(Tensor::from_f64([2, 3, 3], &[[0.3; 9], [-0.2; 9]].concat()).unwrap());
    let m = g.constant(Tensor::full([2, 3, 3], 0.8));
    let agg = self_attention_aggregate(&mut g, &bound, &p, h, m).unwrap();
    for w in [agg.weights_h, agg.weights_m] {
        assert!(g.value(w).data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }
    let z = g.value(agg.z).data();
    for ch in 0..2 {
        let first = z[ch * 9];
        assert!(z[ch * 9..(ch + 1) * 9].iter().all(|&v| (v - first).abs() < 1e-14));
    }
}

fn check_attention(seed: u64, c: usize, hh: usize, ww: usize) -> (f64, f64) {
    let (params, p) = memory(seed, c, 3, (c / 2).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random(&mut rng, &[c, hh, ww], 1.0);
    let m = random(&mut rng, &[c, hh, ww], 1.0);
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let (hv, mv) = (g.constant(h.clone()), g.constant(m.clone()));
    let agg = self_attention_aggregate(&mut g, &bound, &p, hv, mv).unwrap();
    let o = oracles::attention(&Weights::of(&params), "s", h.data(), m.data(), c, hh, ww);
    let diff = oracles::max_diff(g.value(agg.z).data(), &o.z)
        .max(oracles::max_diff(g.value(agg.weights_h).data(), &o.weights_h))
        .max(oracles::max_diff(g.value(agg.weights_m).data(), &o.weights_m));
    let n = hh * ww;
    let mut row_err = 0.0f64;
    for w in [agg.weights_h, agg.weights_m] {
        let data = g.value(w).data();
        for i in 0..n {
            row_err = row_err.max((data[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs());
        }
    }
    (diff, row_err)
}

#[test]
fn attention_matches_loop_oracle_and_rows_normalize() {
    for seed in 0..10 {
        let (diff, rows) = check_attention(seed, 2, 3, 3);
        assert!(diff < 1e-12, "{diff}");
        assert!(rows < 1e-12, "{rows}");
    }
}

fn sa_cell(seed: u64, dims: Dims) -> (Case, SaConvLstmParams) {
    let mut layout = None;
    let c = case(seed, dims, |p, i| {
        layout = Some(SaConvLstmParams::register(p, i, "l", dims.input, dims.hidden, dims.k, None).unwrap());
    });
    (c, layout.unwrap())
}

#[test]
fn sa_zero_memory_params_halve_memory() {
    let (mut c, p) = sa_cell(21, DIMS);
    c.params.zero_prefix("l.sam.");
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = sa_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    let m = g.value(out.m.unwrap()).data();
    let h = g.value(out.h).data();
    for (j, &m0) in c.m.data().iter().enumerate() {
        assert_eq!(m[j], 0.5 * m0);
        assert_eq!(h[j], 0.5 * (0.5 * m0).tanh());
    }
}

#[test]
fn sa_zero_memory_and_params_give_zero_hidden() {
    let (mut c, p) = sa_cell(22, DIMS);
    c.params.zero_prefix("l.sam.");
    c.m = Tensor::zeros(c.m.shape().to_vec());
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = sa_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    assert!(g.value(out.h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn sa_requires_memory() {
    let (c, p) = sa_cell(23, DIMS);
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let mut s = state_of(&mut g, &c);
    s.m = None;
    assert!(sa_convlstm_step(&mut g, &bound, &p, x, &s).is_err());
}

fn check_sa_cell(seed: u64, dims: Dims) -> f64 {
    let (c, p) = sa_cell(seed, dims);
    let mut g = Graph::new();
    let bound = c.params.bind(&mut g);
    let x = g.constant(c.x.clone());
    let s = state_of(&mut g, &c);
    let out = sa_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
    let (h, cc, m) = oracles::sa_convlstm(&Weights::of(&c.params), "l", dims, c.x.data(), c.h.data(), c.c.data(), c.m.data());
    oracles::max_diff(g.value(out.h).data(), &h)
        .max(oracles::max_diff(g.value(out.c).data(), &cc))
        .max(oracles::max_diff(g.value(out.m.unwrap()).data(), &m))
}

fn dims_strategy() -> impl Strategy<Value = (u64, Dims)> {
    (any::<u64>(), 1usize..3, 1usize..4, 2usize..6, 2usize..6, prop::sample::select(vec![1usize, 3, 5])).prop_map(
        |(seed, input, hidden, h, w, k)| (seed, Dims { input, hidden, h, w, k }),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convlstm_matches_transcription((seed, dims) in dims_strategy()) {
        prop_assert!(check_convlstm(seed, dims) < 1e-12);
    }

    #[test]
    fn cbam_cell_matches_transcription((seed, dims) in dims_strategy()) {
        prop_assert!(check_cbam_cell(seed, dims) < 1e-12);
    }

    #[test]
    fn sa_cell_matches_transcription((seed, dims) in dims_strategy()) {
        prop_assert!(check_sa_cell(seed, dims) < 1e-12);
    }

    #[test]
    fn gates_and_hidden_are_bounded((seed, dims) in dims_strategy()) {
        let (c, p) = sa_cell(seed, dims);
        let mut g = Graph::new();
        let bound = c.params.bind(&mut g);
        let x = g.constant(c.x.clone());
        let s = state_of(&mut g, &c);
        let out = sa_convlstm_step(&mut g, &bound, &p, x, &s).unwrap();
        let inner = convlstm_step(&mut g, &bound, &p.base, x, &s).unwrap();
        for v in [out.h, inner.h] {
            prop_assert!(g.value(v).data().iter().all(|&h| h > -1.0 && h < 1.0));
        }
    }
}

/// Gradcheck over the input frame, the incoming state and every parameter.
fn gradcheck_cell(
    params: &ParamSet<f64>,
    with_memory: bool,
    step: impl Fn(&mut Graph<f64>, &Bound, Var, &CellState) -> cloudcast_core::Result<CellState>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut points = vec![
        random(&mut rng, &[1, 4, 4], 1.0),
        random(&mut rng, &[2, 4, 4], 0.9),
        random(&mut rng, &[2, 4, 4], 1.0),
        random(&mut rng, &[2, 4, 4], 1.0),
    ];
    let probe = random(&mut rng, &[2, 4, 4], 1.0);
    let lead = points.len();
    points.extend(params.values().iter().cloned());
    gradcheck_many(
        |g, vars| {
            let bound = Bound::new(vars[lead..].to_vec());
            let state = CellState {
                h: vars[1],
                c: vars[2],
                m: with_memory.then_some(vars[3]),
            };
            let out = step(g, &bound, vars[0], &state)?;
            let w = g.constant(probe.clone());
            let mut loss = g.mul(out.h, w)?;
            let cw = g.mul(out.c, w)?;
            loss = g.add(loss, cw)?;
            if let Some(m) = out.m {
                let mw = g.mul(m, w)?;
                loss = g.add(loss, mw)?;
            }
            Ok(g.sum(loss))
        },
        &points,
        1e-5,
    )
    .unwrap()
}

#[test]
fn convlstm_gradcheck() {
    let mut params = ParamSet::new();
    let p = ConvLstmParams::register(&mut params, &mut Initializer::new(1), "l", 1, 2, 3).unwrap();
    jitter(&mut params, &mut ChaCha8Rng::seed_from_u64(1));
    let err = gradcheck_cell(&params, false, |g, b, x, s| convlstm_step(g, b, &p, x, s));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn cbam_cell_gradcheck() {
    let mut params = ParamSet::new();
    let p = CbamConvLstmParams::register(&mut params, &mut Initializer::new(2), "l", 1, 2, 3, 2, 3).unwrap();
    jitter(&mut params, &mut ChaCha8Rng::seed_from_u64(2));
    let err = gradcheck_cell(&params, false, |g, b, x, s| cbam_convlstm_step(g, b, &p, x, s));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn sa_cell_gradcheck() {
    let mut params = ParamSet::new();
    let p = SaConvLstmParams::register(&mut params, &mut Initializer::new(3), "l", 1, 2, 3, None).unwrap();
    jitter(&mut params, &mut ChaCha8Rng::seed_from_u64(3));
    let err = gradcheck_cell(&params, true, |g, b, x, s| sa_convlstm_step(g, b, &p, x, s));
    assert!(err < 1e-4, "{err}");
}

fn frames(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Vec<Tensor<f64>> {
    (0..n)
        .map(|_| {
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
            Tensor::from_f64([1, h, w], &data).unwrap()
        })
        .collect()
}

#[test]
fn identity_model_rollout_is_persistence() {
    let net = CloudNet::<f64>::new(CloudArchitecture::identity(), 0).unwrap();
    assert!(net.params().is_empty());
    let inputs = frames(&mut ChaCha8Rng::seed_from_u64(1), 6, 5, 5);
    let out = net.predict(&inputs, 6).unwrap();
    assert_eq!(out.len(), 6);
    assert!(out.iter().all(|f| f == &inputs[5]));
}

#[test]
fn rollout_outputs_are_clamped_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for kind in [CellKind::Convlstm, CellKind::Cbam, CellKind::Sa] {
        let mut net = CloudNet::<f64>::new(CloudArchitecture::new(kind, 2, 2, 3), 5).unwrap();
        for t in net.params_mut().values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-5.0..5.0));
        }
        let inputs = frames(&mut rng, 6, 4, 4);
        let a = net.predict(&inputs, 6).unwrap();
        let b = net.predict(&inputs, 6).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|f| f.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn rollout_rejects_zero_horizon_and_unnormalized_frames() {
    let net = CloudNet::<f64>::new(CloudArchitecture::new(CellKind::Convlstm, 1, 2, 3), 5).unwrap();
    let inputs = frames(&mut ChaCha8Rng::seed_from_u64(1), 6, 4, 4);
    assert!(net.predict(&inputs, 0).is_err());
    let mut bad = inputs.clone();
    bad[0].data_mut()[0] = 2.0;
    assert!(net.predict(&bad, 6).is_err());
}

fn stack_gradient_norms(kind: CellKind, rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let mut net = CloudNet::<f64>::new(CloudArchitecture::new(kind, 2, 2, 3), rng.gen()).unwrap();
    jitter(net.params_mut(), rng);
    let head_b = net.params().id("head.b").unwrap();
    net.params_mut().get_mut(head_b).data_mut()[0] = 0.5;
    let inputs = frames(rng, 3, 5, 5);
    let mut g = Graph::new();
    let mut state = net.begin(&mut g, 5, 5);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let preds = net.rollout(&mut g, &mut state, &vars, 2).unwrap();
    let probe = g.constant(frames(rng, 1, 5, 5).remove(0));
    let mut loss = None;
    for p in preds {
        let t = g.mul(p, probe).unwrap();
        let t = g.sum(t);
        loss = Some(match loss {
            None => t,
            Some(acc) => g.add(acc, t).unwrap(),
        });
    }
    let grads = g.backward(loss.unwrap()).unwrap();
    let collected = net.params().collect_grads(&state.bound, &grads);
    net.params()
        .iter()
        .zip(&collected)
        .map(|((name, _), grad)| (name.to_string(), grad.norm()))
        .collect()
}

/// A ReLU unit in a CBAM MLP can be inactive for one particular draw, so a
/// parameter counts as live when any of a few independent draws reaches it.
#[test]
fn stacked_models_have_no_dead_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for kind in [CellKind::Convlstm, CellKind::Cbam, CellKind::Sa] {
        let draws: Vec<_> = (0..4).map(|_| stack_gradient_norms(kind, &mut rng)).collect();
        for (i, (name, _)) in draws[0].iter().enumerate() {
            assert!(draws.iter().any(|d| d[i].1 > 0.0), "{kind}: {name} never receives a gradient");
        }
        if kind != CellKind::Cbam {
            assert!(draws[0].iter().all(|(_, n)| *n > 0.0));
        }
    }
}

#[test]
fn architecture_json_round_trips() {
    let arch = CloudArchitecture::new(CellKind::Sa, 3, 32, 5);
    let json = serde_json::to_string(&arch).unwrap();
    assert!(json.contains("\"cell\":\"sa\""));
    let back: CloudArchitecture = serde_json::from_str(&json).unwrap();
    assert_eq!(back, arch);
    let minimal: CloudArchitecture =
        serde_json::from_str(r#"{"cell":"cbam","layers":1,"hidden":4,"kernel":3}"#).unwrap();
    assert_eq!(minimal.cbam_reduction, 4);
    assert_eq!(minimal.cbam_spatial_kernel, 7);
}

#[test]
fn checkpointed_params_rebuild_the_same_model() {
    let arch = CloudArchitecture::new(CellKind::Cbam, 2, 3, 3);
    let net = CloudNet::<f64>::new(arch.clone(), 42).unwrap();
    let rebuilt = CloudNet::from_params(arch, net.params()).unwrap();
    let inputs = frames(&mut ChaCha8Rng::seed_from_u64(2), 6, 4, 4);
    assert_eq!(net.predict(&inputs, 3).unwrap(), rebuilt.predict(&inputs, 3).unwrap());
    let other = CloudArchitecture::new(CellKind::Cbam, 1, 3, 3);
    assert!(CloudNet::from_params(other, net.params()).is_err());
}

