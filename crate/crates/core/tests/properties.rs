use proptest::prelude::*;

use tandemnet::activation::{if_activation, lif_count};
use tandemnet::codec::{argmax, encode_constant_current};
use tandemnet::data::checkpoint::{decode_checkpoint, encode_checkpoint};
use tandemnet::data::{bin_events, Event, EventStream, IdxFile};
use tandemnet::metrics::{cosine_angle, pearson, synops_ann, synops_from_counts};
use tandemnet::net::{
    backward_tandem, forward_tandem, forward_tandem_eval, inference_snn, init_weights, loss_ce, Architecture,
    DecodeMode, InputShape, Phase, TandemNetwork,
};
use tandemnet::neuron::{
    run_layer, LayerInput, NeuronKind, NeuronParams, Propagation, SpikeCount, SpikeTrain,
};
use tandemnet::synapse::{Connectivity, Synapses};
use tandemnet::tensor::{conv2d, matmul, reduce_sum, ConvShape, DenseTensor};

fn single_neuron_count(params: &NeuronParams, current: f64, window: usize) -> (u32, SpikeTrain) {
    let conn = Connectivity::Dense { n_in: 1, n_out: 1 };
    let (w, b) = ([1.0], [0.0]);
    let syn = Synapses::new(conn, &w, &b).unwrap();
    let input = [current];
    let (train, count) = run_layer(
        params,
        &syn,
        LayerInput::Constant {
            values: &input,
            batch: 1,
        },
        window,
        Propagation::SameStep,
    )
    .unwrap();
    (count.counts()[0], train)
}

fn tensor(shape: &[usize]) -> impl Strategy<Value = DenseTensor> {
    let n: usize = shape.iter().product();
    let shape = shape.to_vec();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| DenseTensor::new(shape.clone(), d).unwrap())
}

fn net(arch: &str, kind: NeuronKind, window: usize, bn: bool, seed: u64) -> TandemNetwork {
    let a = Architecture::parse(arch).unwrap();
    let mut n = TandemNetwork::from_arch(
        &a,
        InputShape::flat(a.input_features().unwrap()),
        NeuronParams::standard(kind),
        window,
        DecodeMode::Membrane,
        bn,
    )
    .unwrap();
    init_weights(&mut n, seed);
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_matmul_is_exact(a in tensor(&[4, 5])) {
        prop_assert_eq!(matmul(&DenseTensor::identity(4), &a).unwrap(), a);
    }

    #[test]
    fn unit_conv_is_identity(x in tensor(&[1, 2, 4, 3])) {
        let mut k = DenseTensor::zeros(&[2, 2, 1, 1]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        prop_assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn reduce_order_does_not_matter(x in tensor(&[3, 4, 5])) {
        let a = reduce_sum(&reduce_sum(&reduce_sum(&x, 0).unwrap(), 0).unwrap(), 0).unwrap().data()[0];
        let b = reduce_sum(&reduce_sum(&reduce_sum(&x, 2).unwrap(), 1).unwrap(), 0).unwrap().data()[0];
        let s = x.sum();
        prop_assert!((a - s).abs() <= 1e-12 * s.abs().max(1.0));
        prop_assert!((b - s).abs() <= 1e-12 * s.abs().max(1.0));
    }

    #[test]
    fn counts_are_bounded_and_deterministic(
        w in prop::collection::vec(-1.5f64..1.5, 12),
        x in prop::collection::vec(0.0f64..1.0, 8),
        window in 1usize..20,
        lif in any::<bool>(),
    ) {
        let kind = if lif { NeuronKind::Lif } else { NeuronKind::If };
        let params = NeuronParams::standard(kind);
        let conn = Connectivity::Dense { n_in: 4, n_out: 3 };
        let b = [0.05, -0.1, 0.0];
        let syn = Synapses::new(conn, &w, &b).unwrap();
        let run = || run_layer(&params, &syn, LayerInput::Constant { values: &x, batch: 2 }, window, Propagation::SameStep).unwrap();
        let (t1, c1) = run();
        let (t2, c2) = run();
        prop_assert_eq!(&t1, &t2);
        prop_assert_eq!(&c1, &c2);
        prop_assert!(c1.counts().iter().all(|&c| c as usize <= window));
        prop_assert_eq!(t1.count(), c1);
    }

    #[test]
    fn if_subtractive_reset_conserves_charge(current in -0.5f64..2.5, window in 1usize..40) {
        let params = NeuronParams::standard(NeuronKind::If);
        let (_, train) = single_neuron_count(&params, current, window);
        // replay: U[T] = Σ I − θ·Σ_{t<T} s[t]
        let mut u = 0.0;
        let mut last = 0.0;
        for t in 0..window {
            u = u + current - params.theta * last;
            last = train.get(t, 0, 0) as f64;
        }
        let spikes_before_last: u32 = (0..window - 1).map(|t| train.get(t, 0, 0) as u32).sum();
        let expect = current * window as f64 - params.theta * spikes_before_last as f64;
        prop_assert!((u - expect).abs() < 1e-9);
    }

    #[test]
    fn if_count_is_monotone_and_rate_consistent(a in 0.0f64..1.0, d in 0.0f64..0.5, window in 1usize..64) {
        let params = NeuronParams::standard(NeuronKind::If);
        let (ca, _) = single_neuron_count(&params, a, window);
        let (cb, _) = single_neuron_count(&params, a + d, window);
        prop_assert!(ca <= cb);
        let predicted = window as f64 * a / params.theta;
        prop_assert!((ca as f64 - predicted).abs() <= 1.0);
    }

    #[test]
    fn if_scale_identity(z in -50.0f64..50.0, theta in 0.01f64..10.0) {
        let got = if_activation(&DenseTensor::vector(&[z * theta]).unwrap(), theta).unwrap().data()[0];
        prop_assert!((got - z.max(0.0)).abs() <= 1e-12 * z.abs().max(1.0));
    }

    #[test]
    fn lif_activation_is_monotone(a in -2.0f64..2.0, d in 1e-6f64..1.0) {
        prop_assert!(lif_count(a, 0.1, 20.0, 10) < lif_count(a + d, 0.1, 20.0, 10));
    }

    #[test]
    fn layer_one_counts_track_analog_prediction(
        w in prop::collection::vec(-0.25f64..0.25, 20),
        x in prop::collection::vec(0.0f64..1.0, 4),
        window in 1usize..32,
    ) {
        let mut n = net("fc:4-5-2", NeuronKind::If, window, false, 0);
        n.layers_mut()[0].weights.data_mut().copy_from_slice(&w);
        let enc = encode_constant_current(&DenseTensor::new(vec![1, 4], x).unwrap(), window).unwrap();
        let tr = forward_tandem_eval(&n, &enc).unwrap();
        let l = &tr.layers[0];
        for (c, a) in l.forwarded.iter().zip(&l.activation) {
            // per-step drive is below θ here, so the prediction never exceeds T
            prop_assert!((c - a).abs() <= 1.0, "count {} vs prediction {}", c, a);
        }
    }

    #[test]
    fn drive_comes_from_counts(seed in 0u64..1000, x in prop::collection::vec(0.0f64..1.0, 6)) {
        let n = net("fc:3-6-5-2", NeuronKind::If, 6, false, seed);
        let enc = encode_constant_current(&DenseTensor::new(vec![2, 3], x).unwrap(), 6).unwrap();
        let tr = forward_tandem_eval(&n, &enc).unwrap();
        for l in 1..3 {
            let z = n.layers()[l].synapses().unwrap().drive(&tr.layers[l - 1].forwarded, 2, 6.0).unwrap();
            prop_assert_eq!(&z, &tr.layers[l].drive);
        }
    }

    #[test]
    fn folding_preserves_inference(seed in 0u64..1000, x in prop::collection::vec(0.0f64..1.0, 8)) {
        let mut n = net("fc:4-6-5-3", NeuronKind::If, 8, true, seed);
        let enc = encode_constant_current(&DenseTensor::new(vec![2, 4], x).unwrap(), 8).unwrap();
        forward_tandem(&mut n, &enc, Phase::Train).unwrap();
        let before = forward_tandem_eval(&n, &enc).unwrap();
        let mut folded = n.clone();
        folded.fold_batchnorm().unwrap();
        let after = forward_tandem_eval(&folded, &enc).unwrap();
        for (b, a) in before.layers.iter().zip(&after.layers) {
            for (x, y) in b.drive.iter().zip(&a.drive) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn synops_doubles_with_duplicated_trains(counts in prop::collection::vec(0u32..=4, 6)) {
        let n = net("fc:2-3-4", NeuronKind::If, 4, false, 0);
        let c = SpikeCount::new(4, 2, 3, counts.clone()).unwrap();
        let doubled = SpikeCount::new(8, 2, 3, counts.iter().map(|v| 2 * v).collect()).unwrap();
        let one = synops_from_counts(&n, &[&c]).unwrap();
        prop_assert_eq!(synops_from_counts(&n, &[&doubled]).unwrap(), 2 * one);
        prop_assert_eq!(one, counts.iter().map(|&v| v as u64 * 4).sum::<u64>());
    }

    #[test]
    fn synops_ann_ignores_window(window in 1usize..64) {
        prop_assert_eq!(synops_ann(&net("fc:5-7-3", NeuronKind::If, window, false, 0)), 5 * 7 + 7 * 3);
    }

    #[test]
    fn angle_and_pcc_match_brute_force(
        a in prop::collection::vec(-5.0f64..5.0, 2..40),
        seed in any::<u64>(),
    ) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * 0.7 + ((i as u64 ^ seed) % 13) as f64 * 0.1).collect();
        let (mut num, mut na, mut nb) = (0.0, 0.0, 0.0);
        for i in 0..a.len() {
            num += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if na > 0.0 && nb > 0.0 {
            let want = (num / (na * nb).sqrt()).clamp(-1.0, 1.0).acos() * 180.0 / std::f64::consts::PI;
            prop_assert!((cosine_angle(&a, &b).unwrap() - want).abs() < 1e-10);
        }
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        if va > 0.0 && vb > 0.0 {
            prop_assert!((pearson(&a, &b).unwrap() - cov / (va * vb).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn idx_parser_rejects_inconsistent_files(
        magic in prop::sample::select(vec![0x0803u32, 0x0801, 0x0802, 0x0804, 0]),
        dims in prop::collection::vec(0u32..6, 0..4),
        payload in prop::collection::vec(any::<u8>(), 0..200),
    ) {
        let mut bytes = magic.to_be_bytes().to_vec();
        for d in &dims {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.extend_from_slice(&payload);
        let rank = match magic { 0x0803 => Some(3), 0x0801 => Some(1), _ => None };
        let consistent = rank.is_some_and(|r| {
            dims.len() >= r && {
                let promised: usize = dims[..r].iter().map(|&d| d as usize).product();
                let tail = (dims.len() - r) * 4 + payload.len();
                tail == promised
            }
        });
        prop_assert_eq!(IdxFile::parse(&bytes, "fuzz").is_ok(), consistent);
    }

    #[test]
    fn checkpoint_keeps_decisions(seed in 0u64..500, x in prop::collection::vec(0.0f64..1.0, 15)) {
        let mut n = net("fc:5-7-4", NeuronKind::If, 6, false, seed);
        n.round_to_f32();
        let loaded = decode_checkpoint(&encode_checkpoint(&n).unwrap()).unwrap();
        let enc = encode_constant_current(&DenseTensor::new(vec![3, 5], x).unwrap(), 6).unwrap();
        let a = inference_snn(&n, &enc).unwrap();
        let b = inference_snn(&loaded, &enc).unwrap();
        let da: Vec<usize> = a.data().chunks(4).map(argmax).collect();
        let db: Vec<usize> = b.data().chunks(4).map(argmax).collect();
        prop_assert_eq!(da, db);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn event_binning_conserves_in_range_events(
        raw in prop::collection::vec((0u32..120_000, 0u16..5, 0u16..4, 0u8..2), 0..60),
        window in 1usize..12,
    ) {
        let mut events: Vec<Event> = raw.into_iter().map(|(t_us, x, y, polarity)| Event { t_us, x, y, polarity }).collect();
        events.sort_by_key(|e| e.t_us);
        let in_range = events.iter().filter(|e| (e.t_us / 10_000) < window as u32).count();
        let s = EventStream { width: 5, height: 4, events };
        let f = bin_events(&s, 10, 5, 4, window).unwrap();
        prop_assert_eq!(f.sum() as usize, in_range);
    }
}

#[test]
fn conv_fan_out_reference_cases() {
    let geo = ConvShape {
        in_channels: 1,
        in_h: 6,
        in_w: 6,
        out_channels: 1,
        kh: 3,
        kw: 3,
        stride: 1,
        padding: 0,
    };
    let map = tandemnet::tensor::conv_fan_out_map(&geo);
    assert_eq!(map[3 * 6 + 3], 9);
    let padded = ConvShape { padding: 1, ..geo };
    assert_eq!(tandemnet::tensor::conv_fan_out_map(&padded)[0], 4);
}

#[test]
fn optimizer_updates_reach_the_spiking_path() {
    let mut n = net("fc:3-5-2", NeuronKind::If, 4, false, 7);
    let enc = encode_constant_current(&DenseTensor::from_rows(&[&[0.9, 0.2, 0.6]]).unwrap(), 4).unwrap();
    let before = inference_snn(&n, &enc).unwrap();
    let mut tr_net = n.clone();
    let tr = forward_tandem(&mut tr_net, &enc, Phase::Train).unwrap();
    let (_, g) = loss_ce(&tr.output, &[1]).unwrap();
    let grads = backward_tandem(&n, &tr, &g).unwrap();
    tandemnet::net::optim::sgd_step(&mut n, &grads, 0.5, 0.0, 0.0).unwrap();
    let after = inference_snn(&n, &enc).unwrap();
    assert_ne!(before, after);
    let trace = forward_tandem_eval(&n, &enc).unwrap();
    assert_eq!(trace.output, after);
}

#[test]
fn separable_toy_reaches_full_train_accuracy() {
    use tandemnet::net::optim::Sgd;
    use tandemnet::net::Optimizer;
    let mut n = net("fc:2-8-2", NeuronKind::If, 4, false, 5);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..32 {
        let t = i as f64 / 31.0;
        let c = i % 2;
        rows.extend_from_slice(&if c == 0 {
            [0.6 + 0.4 * t, 0.3 * t]
        } else {
            [0.3 * t, 0.6 + 0.4 * t]
        });
        labels.push(c);
    }
    let x = DenseTensor::new(vec![32, 2], rows).unwrap();
    let enc = encode_constant_current(&x, 4).unwrap();
    let mut opt = Sgd::new(0.9, 0.0);
    for _ in 0..200 {
        let tr = forward_tandem(&mut n, &enc, Phase::Train).unwrap();
        let (_, g) = loss_ce(&tr.output, &labels).unwrap();
        let grads = backward_tandem(&n, &tr, &g).unwrap();
        opt.step(&mut n, &grads, 0.05).unwrap();
    }
    let out = inference_snn(&n, &enc).unwrap();
    let preds: Vec<usize> = out.data().chunks(2).map(argmax).collect();
    assert_eq!(preds, labels);
}
