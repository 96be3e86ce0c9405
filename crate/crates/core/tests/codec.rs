use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sws_core::codec::*;
use sws_core::network::Activation;
use sws_core::postprocess::{QuantizedLayer, QuantizedNetwork};
use sws_core::Error;

fn example_matrix() -> Vec<f64> {
    vec![
        0., 0., 0., 1., //
        0., 2., 0., 0., //
        0., 0., 0., 0., //
        2., 5., 0., 0., //
        0., 0., 0., 1.,
    ]
}

#[test]
fn five_by_four_example() {
    let m = to_csr(&example_matrix(), 5, 4).unwrap();
    assert_eq!(m.a, vec![1., 2., 2., 5., 1.]);
    assert_eq!(m.ir, vec![0, 1, 2, 2, 4, 5]);
    assert_eq!(m.ic, vec![3, 1, 0, 1, 3]);
    assert_eq!(naive_rate(&m), 1.25);
    assert_eq!(from_csr(&m).unwrap(), example_matrix());
}

fn random_quantized(rng: &mut ChaCha8Rng, sizes: &[usize], components: usize, density: f64) -> QuantizedNetwork {
    let mut means = vec![0.0];
    means.extend((1..components).map(|_| rng.gen_range(-0.5..0.5)));
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| QuantizedLayer {
            rows: w[1],
            cols: w[0],
            assignments: (0..w[0] * w[1])
                .map(|_| {
                    if rng.gen_bool(density) {
                        rng.gen_range(1..components) as u16
                    } else {
                        0
                    }
                })
                .collect(),
            biases: (0..w[1]).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            activation: if i + 2 == sizes.len() { Activation::Softmax } else { Activation::Relu },
        })
        .collect();
    QuantizedNetwork { means, layers }
}

#[test]
fn blob_round_trip_and_bit_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_quantized(&mut rng, &[120, 40, 10], 9, 0.1);
    let (blob, report) = encode_network(&q, DEFAULT_P_FC, DEFAULT_P_CONV).unwrap();
    let decoded = decode_network(&blob).unwrap();
    let expected = q.to_network().unwrap();
    assert_eq!(decoded, expected);
    assert_eq!(report.total_bits, blob.len() * 8);
    assert_eq!(report.weights, 120 * 40 + 40 * 10);
    let layer_sum: usize = report.layers.iter().map(|l| l.total_bits).sum();
    assert_eq!(layer_sum + 64, report.total_bits);
    for l in &report.layers {
        assert!(l.ic_bits <= l.ic_fixed_bits && l.a_bits <= l.a_fixed_bits);
        assert!(l.entries < 1usize << l.p_prun);
        assert_eq!(l.entries, l.nonzero + l.fillers);
    }
    assert!(report.compression_rate_without_overhead > report.compression_rate);
    let json = report.to_json().unwrap();
    assert_eq!(CompressionReport::from_json(&json).unwrap(), report);
}

#[test]
fn fully_pruned_layer_costs_only_ir_and_header() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut q = random_quantized(&mut rng, &[30, 20, 5], 4, 0.3);
    q.layers[0].assignments.iter_mut().for_each(|a| *a = 0);
    let (blob, report) = encode_network(&q, 5, 8).unwrap();
    let l = &report.layers[0];
    assert_eq!((l.nonzero, l.entries, l.codebook_size, l.p_prun), (0, 0, 0, 0));
    assert_eq!((l.ic_bits, l.a_bits, l.table_bits, l.ir_bits), (0, 0, 0, 0));
    // header (15 bytes) + empty codebook count (2) + biases
    assert_eq!(l.total_bits, 8 * (15 + 2) + l.bias_bits);
    assert_eq!(decode_network(&blob).unwrap(), q.to_network().unwrap());
}

#[test]
fn wide_gaps_need_fillers_that_survive_decoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_quantized(&mut rng, &[300, 8, 3], 3, 0.01);
    let (blob, report) = encode_network(&q, 3, 8).unwrap();
    assert!(report.layers[0].fillers > 0);
    assert_eq!(decode_network(&blob).unwrap(), q.to_network().unwrap());
}

#[test]
fn corrupted_blobs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = random_quantized(&mut rng, &[20, 10, 4], 5, 0.4);
    let (blob, _) = encode_network(&q, 5, 8).unwrap();
    assert!(matches!(decode_network(&blob[..blob.len() - 3]), Err(Error::Corrupt(_))));
    let mut bad = blob.clone();
    bad[0] = b'X';
    assert!(matches!(decode_network(&bad), Err(Error::Corrupt(_))));
    let mut long = blob.clone();
    long.push(0);
    assert!(matches!(decode_network(&long), Err(Error::Corrupt(_))));
    assert!(matches!(encode_network(&q, 0, 8), Err(Error::Config(_))));
}

#[test]
fn encoding_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = random_quantized(&mut rng, &[50, 30, 10], 7, 0.2);
    let a = encode_network(&q, 5, 8).unwrap();
    let b = encode_network(&q, 5, 8).unwrap();
    assert_eq!(a, b);
}

fn entropy(symbols: &[u32]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for s in symbols {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let n = symbols.len() as f64;
    counts.values().map(|&c| -(c as f64 / n) * (c as f64 / n).log2()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn csr_round_trip(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..20, density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.gen_bool(density) { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let m = to_csr(&dense, rows, cols).unwrap();
        prop_assert_eq!(m.ir.len(), rows + 1);
        prop_assert_eq!(from_csr(&m).unwrap(), dense.clone());
        let nnz = dense.iter().filter(|v| **v != 0.0).count();
        let oracle = (rows * cols) as f64 / (2 * nnz + rows + 1) as f64;
        prop_assert_eq!(naive_rate(&m), oracle);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn relative_index_round_trip(seed in any::<u64>(), p in prop::sample::select(vec![3u8, 5, 8])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = rng.gen_range(1..2000usize);
        let density = rng.gen_range(0.001..0.5);
        let indices: Vec<usize> = (0..width).filter(|_| rng.gen_bool(density)).collect();
        let values: Vec<u32> = indices.iter().map(|_| rng.gen_range(1..20)).collect();
        let s = rel_encode(&indices, &values, p).unwrap();
        prop_assert!(s.gaps.iter().all(|&g| g < 1 << p));
        for (g, v) in s.gaps.iter().zip(&s.values) {
            if *v == 0 {
                prop_assert_eq!(*g, (1u32 << p) - 1);
            }
        }
        prop_assert_eq!(rel_decode(&s).unwrap(), (indices, values));
    }

    #[test]
    fn codebook_round_trip(seed in any::<u64>(), distinct in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<f64> = (0..distinct).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..300).map(|_| table[rng.gen_range(0..distinct)]).collect();
        let (cb, idx) = build_codebook(&values).unwrap();
        prop_assert!(cb.len() <= 1 << cb.index_width());
        prop_assert_eq!(cb.lookup(&idx).unwrap(), values);
    }

    #[test]
    fn huffman_round_trip_kraft_and_entropy_bound(seed in any::<u64>(), alphabet in 2u32..40, len in 2usize..3000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // skewed distribution so that codes of different lengths appear
        let symbols: Vec<u32> = (0..len)
            .map(|_| ((rng.gen::<f64>().powi(3)) * alphabet as f64) as u32)
            .collect();
        let distinct = symbols.iter().collect::<std::collections::BTreeSet<_>>().len();
        let (table, bytes, bits) = huffman_encode(&symbols).unwrap();
        prop_assert_eq!(huffman_decode(&table, &bytes, symbols.len()).unwrap(), symbols.clone());
        prop_assert_eq!(bits, table.encoded_bits(&symbols));
        if distinct >= 2 {
            let kraft: f64 = table.lengths().iter().filter(|&&l| l > 0).map(|&l| 0.5f64.powi(l as i32)).sum();
            prop_assert!((kraft - 1.0).abs() < 1e-12, "kraft {}", kraft);
            let mean = bits as f64 / len as f64;
            prop_assert!(mean < entropy(&symbols) + 1.0);
            let fixed = (usize::BITS - (distinct - 1).leading_zeros()) as usize;
            prop_assert!(bits <= len * fixed);
        }
        // prefix-free: no code is a prefix of another
        let codes: Vec<(u64, u8)> = (0..table.alphabet() as u32).filter_map(|s| table.code(s)).collect();
        for (i, &(a, la)) in codes.iter().enumerate() {
            for &(b, lb) in &codes[i + 1..] {
                let l = la.min(lb);
                prop_assert!(a >> (la - l) != b >> (lb - l));
            }
        }
    }

    #[test]
    fn blob_round_trip_on_random_networks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [rng.gen_range(1..60), rng.gen_range(1..20), rng.gen_range(1..6)];
        let components = rng.gen_range(2..12);
        let density = rng.gen_range(0.0..1.0);
        let q = random_quantized(&mut rng, &sizes, components, density);
        let p = rng.gen_range(1..=8);
        let (blob, report) = encode_network(&q, p, 8).unwrap();
        prop_assert_eq!(report.total_bits, blob.len() * 8);
        prop_assert_eq!(decode_network(&blob).unwrap(), q.to_network().unwrap());
    }
}
