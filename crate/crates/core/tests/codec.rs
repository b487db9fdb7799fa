use iscs_core::codec::entropy::{SymbolTable, FREQ_TOTAL};
use iscs_core::codec::range_coder::{RangeDecoder, RangeEncoder};
use iscs_core::codec::{
    analytic_bits, decode, encode_block, encode_image, payload_range, per_channel_bits, quantize,
    ChannelOrder, CodecError, EncodeOptions, FitParams, LatentBlock, ToyCodecModel, LAMBDA_EPS,
};
use iscs_core::evaluation::{psnr, spearman};
use iscs_core::importance::variance_scores;
use iscs_core::synth::one_over_f_image;
use iscs_core::tensor_io::{Image, TensorFile};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64, p: usize, c: usize) -> ToyCodecModel {
    let imgs: Vec<Image> = (0..3)
        .map(|i| one_over_f_image(64, 64, seed * 7 + i, 40.0))
        .collect();
    ToyCodecModel::fit(
        &imgs,
        &FitParams {
            patch_size: p,
            channels: c,
            seed,
            ..FitParams::default()
        },
    )
    .unwrap()
}

fn patches(imgs: &[Image], p: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for img in imgs {
        let w = img.width();
        for py in 0..img.height() / p {
            for px in 0..w / p {
                let mut v = Vec::new();
                for y in 0..p {
                    for x in 0..p {
                        v.push(img.samples()[(py * p + y) * w + px * p + x] as f64 / 255.0);
                    }
                }
                out.push(v);
            }
        }
    }
    out
}

fn covariance(ps: &[Vec<f64>]) -> DMatrix<f64> {
    let d = ps[0].len();
    let n = ps.len() as f64;
    let mut mean = vec![0.0; d];
    for x in ps {
        for k in 0..d {
            mean[k] += x[k] / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in ps {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
            }
        }
    }
    cov
}

#[test]
fn eigen_decomposition_matches_nalgebra_and_power_iteration() {
    let imgs: Vec<Image> = (0..4)
        .map(|i| one_over_f_image(64, 64, 90 + i, 40.0))
        .collect();
    let p = 4;
    let model = ToyCodecModel::fit(
        &imgs,
        &FitParams {
            patch_size: p,
            channels: 16,
            ..FitParams::default()
        },
    )
    .unwrap();
    let cov = covariance(&patches(&imgs, p));
    let mut reference: Vec<f64> = cov
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    reference.sort_by(|a, b| b.total_cmp(a));
    let top = reference[0];
    for c in 1..16 {
        let lambda = model.eigenvalues()[c];
        assert!(
            (lambda - reference[c - 1]).abs() <= 1e-9 * top,
            "channel {c}"
        );
        let v = DMatrix::from_column_slice(p * p, 1, model.basis_vector(c));
        let residual = (&cov * &v - &v * lambda).norm();
        assert!(residual <= 1e-8 * top, "channel {c} residual {residual}");
        assert!((v.norm() - 1.0).abs() < 1e-10);
    }

    let mut x = DMatrix::from_element(p * p, 1, 1.0);
    let mut est = 0.0;
    for _ in 0..2000 {
        let y = &cov * &x;
        est = y.norm() / x.norm();
        x = &y / y.norm();
    }
    assert!((est - model.eigenvalues()[1]).abs() <= 1e-8 * est);
}

#[test]
fn constant_sum_patches_give_variance_proportional_to_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = 4;
    let (w, h) = (64, 64);
    let mut s = vec![0u8; w * h];
    for py in 0..h / p {
        for px in 0..w / p {
            for k in 0..p * p / 2 {
                let v: u8 = rng.gen_range(0..=255);
                let (a, b) = (k, p * p - 1 - k);
                s[(py * p + a / p) * w + px * p + a % p] = v;
                s[(py * p + b / p) * w + px * p + b % p] = 255 - v;
            }
        }
    }
    let img = Image::gray(w, h, s).unwrap();
    let model = ToyCodecModel::fit(
        &[img],
        &FitParams {
            patch_size: p,
            channels: 9,
            ..FitParams::default()
        },
    )
    .unwrap();
    let var = variance_scores(&model.export_encoder_weights());
    let d = (p * p) as f64;
    for (c, &lambda) in model.eigenvalues().iter().enumerate().take(9).skip(1) {
        assert!(lambda > 0.0);
        assert!((var[c] * d - lambda).abs() <= 1e-9 * lambda, "channel {c}");
    }
    let rho = spearman(&var[1..], &model.eigenvalues()[1..]).unwrap();
    assert!((rho - 1.0).abs() < 1e-12);
}

/// Paired-pixel patches lie in an 8-dimensional affine subspace that the
/// model spans exactly, so a tiny step reconstructs every pixel. Low
/// contrast keeps the latents inside the symbol range at this step.
#[test]
fn near_lossless_in_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = 4;
    let (w, h) = (64, 64);
    let pair = |k: usize| (k, k + 8);
    let mut s = vec![0u8; w * h];
    for py in 0..h / p {
        for px in 0..w / p {
            for k in 0..8 {
                let v: u8 = rng.gen_range(112..=144);
                let (a, b) = pair(k);
                s[(py * p + a / p) * w + px * p + a % p] = v;
                s[(py * p + b / p) * w + px * p + b % p] = v;
            }
        }
    }
    let img = Image::gray(w, h, s).unwrap();
    let model = ToyCodecModel::fit(
        std::slice::from_ref(&img),
        &FitParams {
            patch_size: p,
            channels: 16,
            delta: 1e-6,
            ..FitParams::default()
        },
    )
    .unwrap();
    assert!(model.eigenvalues()[9..]
        .iter()
        .all(|&l| l == 0.0 || l <= LAMBDA_EPS));
    let bytes = encode_image(&model, &img, &EncodeOptions::default()).unwrap();
    let d = decode(&bytes, &model, None).unwrap();
    assert!(d.block.symbols.iter().all(|q| q.abs() < i16::MAX as i32));
    assert!(psnr(&img, &d.reconstruct(&model)).unwrap() >= 80.0);
}

fn random_image(rng: &mut impl Rng) -> Image {
    let w = rng.gen_range(1..=70);
    let h = rng.gen_range(1..=70);
    if rng.gen_bool(0.5) {
        let big = one_over_f_image(w.max(2), h.max(2), rng.gen(), rng.gen_range(1.0..80.0));
        big.crop(w.min(big.width()), h.min(big.height()))
    } else {
        Image::gray(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }
}

#[test]
fn bitstream_roundtrip_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let models = [
        small_model(1, 4, 12),
        small_model(2, 8, 32),
        small_model(3, 2, 4),
    ];
    for _ in 0..150 {
        let model = models.choose(&mut rng).unwrap();
        let img = random_image(&mut rng);
        let delta = 10f64.powf(rng.gen_range(-4.0..-0.5));
        let scalar_channels = if rng.gen_bool(0.3) { vec![0] } else { vec![] };
        let opts = EncodeOptions {
            delta: Some(delta),
            scalar_channels,
            order: None,
        };
        let bytes = encode_image(model, &img, &opts).unwrap();
        let d = decode(&bytes, model, None).unwrap();
        let p = model.patch_size();
        let padded = img.pad_edge(img.width().div_ceil(p) * p, img.height().div_ceil(p) * p);
        let block = model.encode_latents(&padded, delta as f32 as f64).unwrap();
        for ch in 0..model.channels() {
            if !opts.scalar_channels.contains(&ch) {
                assert!(block.channel_symbols(ch).eq(d.block.channel_symbols(ch)));
            }
        }
        assert_eq!((d.width, d.height), (img.width(), img.height()));
        let rec = d.reconstruct(model);
        assert!(rec.same_shape(&img));
    }
}

/// Code length of one symbol recomputed from the documented table rule:
/// `1 + floor(p * spare)` counts per bucket, the remainder to the most
/// probable bucket, plus raw bits for escapes.
fn oracle_cost(scale: f64, q: i32) -> f64 {
    let phi = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let tail = ((6.0 * scale).ceil() as i64).clamp(1, 2048) as i32;
    let buckets = (2 * tail + 3) as usize;
    let mut probs = vec![phi((-tail as f64 - 0.5) / scale)];
    for k in -tail..=tail {
        probs.push((phi((k as f64 + 0.5) / scale) - phi((k as f64 - 0.5) / scale)).max(0.0));
    }
    probs.push(1.0 - phi((tail as f64 + 0.5) / scale));
    let spare = (FREQ_TOTAL as usize - buckets) as f64;
    let mut freq: Vec<u64> = probs
        .iter()
        .map(|p| 1 + (p * spare).floor() as u64)
        .collect();
    let used: u64 = freq.iter().sum();
    let best = (0..buckets).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
    freq[best] += FREQ_TOTAL as u64 - used;
    let (bucket, extra) = if q < -tail {
        (0, 16.0)
    } else if q > tail {
        (buckets - 1, 16.0)
    } else {
        ((q + tail + 1) as usize, 0.0)
    };
    -(freq[bucket] as f64 / FREQ_TOTAL as f64).log2() + extra
}

#[test]
fn table_costs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..200 {
        let scale = 10f64.powf(rng.gen_range(-3.0..2.5));
        let t = SymbolTable::gaussian(scale);
        for _ in 0..20 {
            let q = rng.gen_range(-(t.tail() + 5)..=t.tail() + 5);
            let (a, b) = (t.cost_bits(q), oracle_cost(scale, q));
            assert!(
                (a - b).abs() <= 1e-9 * b.max(1.0),
                "scale {scale} q {q}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn entropy_coder_roundtrip_and_rate_bound_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..300 {
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let t = SymbolTable::gaussian(scale);
        let n = rng.gen_range(0..3000);
        let qs: Vec<i32> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.01) {
                    rng.gen_range(-30000..30000)
                } else {
                    (rng.sample::<f64, _>(rand_distr::StandardNormal) * scale).round() as i32
                }
            })
            .collect();
        let mut enc = RangeEncoder::new();
        for &q in &qs {
            t.encode(&mut enc, q);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &q in &qs {
            assert_eq!(t.decode(&mut dec).unwrap(), q);
        }
        let bits: f64 = qs.iter().map(|&q| oracle_cost(scale, q)).sum();
        assert!((bytes.len() as f64) <= bits / 8.0 * 1.001 + 64.0);
    }
}

#[test]
fn stream_payload_is_within_bound_of_analytic_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = small_model(4, 8, 32);
    for _ in 0..30 {
        let img = one_over_f_image(64, 64, rng.gen(), rng.gen_range(5.0..60.0));
        let delta = 10f64.powf(rng.gen_range(-3.0..-1.0)) as f32 as f64;
        let bytes = encode_image(
            &model,
            &img,
            &EncodeOptions {
                delta: Some(delta),
                ..Default::default()
            },
        )
        .unwrap();
        let payload = payload_range(&bytes).unwrap().len() as f64;
        let block = model.encode_latents(&img, delta).unwrap();
        let bits = analytic_bits(&model, &block, delta, &[]);
        assert!(payload <= bits / 8.0 * 1.001 + 64.0);
        let per: f64 = per_channel_bits(&model, &block, delta).iter().sum();
        assert!((per - bits).abs() <= 1e-9 * bits);
    }
}

#[test]
fn permuted_streams_decode_to_the_same_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let model = small_model(5, 4, 16);
    for _ in 0..40 {
        let img = random_image(&mut rng);
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let order = ChannelOrder {
            permutation: perm,
            hash: rng.gen(),
        };
        let scalar_channels = if rng.gen_bool(0.5) { vec![0] } else { vec![] };
        let plain = EncodeOptions {
            scalar_channels: scalar_channels.clone(),
            ..Default::default()
        };
        let permuted = EncodeOptions {
            scalar_channels,
            order: Some(order.clone()),
            ..Default::default()
        };
        let a = decode(&encode_image(&model, &img, &plain).unwrap(), &model, None).unwrap();
        let pbytes = encode_image(&model, &img, &permuted).unwrap();
        let b = decode(&pbytes, &model, Some(&order)).unwrap();
        assert_eq!(a.block, b.block);
        assert_eq!(a.scalars, b.scalars);
        assert_eq!(a.reconstruct(&model), b.reconstruct(&model));

        assert!(matches!(
            decode(&pbytes, &model, None),
            Err(CodecError::MissingPermutation)
        ));
        let mut wrong = order.clone();
        wrong.hash[0] ^= 1;
        assert!(matches!(
            decode(&pbytes, &model, Some(&wrong)),
            Err(CodecError::ManifestHashMismatch)
        ));
    }
}

#[test]
fn corrupted_streams_are_rejected() {
    let model = small_model(6, 4, 8);
    let img = one_over_f_image(32, 32, 1, 30.0);
    let bytes = encode_image(&model, &img, &EncodeOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..100 {
        let mut b = bytes.clone();
        let i = rng.gen_range(0..b.len());
        b[i] ^= 1 << rng.gen_range(0..8);
        assert!(decode(&b, &model, None).is_err());
    }
    assert!(decode(&bytes[..bytes.len() - 1], &model, None).is_err());
    let other = small_model(7, 4, 8);
    assert!(matches!(
        decode(&bytes, &other, None),
        Err(CodecError::ModelHashMismatch)
    ));
}

#[test]
fn model_container_roundtrip() {
    let model = small_model(8, 8, 20);
    let tf = TensorFile::from_bytes(&model.to_tensor_file().to_bytes()).unwrap();
    let back = ToyCodecModel::from_tensor_file(&tf).unwrap();
    assert_eq!(back.hash(), model.hash());
    assert_eq!(back.to_bytes(), model.to_bytes());
    let img = one_over_f_image(40, 24, 3, 30.0);
    assert_eq!(
        encode_image(&model, &img, &EncodeOptions::default()).unwrap(),
        encode_image(&back, &img, &EncodeOptions::default()).unwrap()
    );
}

#[test]
fn block_shape_is_checked() {
    let model = small_model(9, 4, 8);
    let block = LatentBlock {
        patches_y: 2,
        patches_x: 2,
        channels: 8,
        symbols: vec![0; 32],
    };
    assert!(encode_block(&model, &block, 8, 8, &EncodeOptions::default()).is_ok());
    assert!(encode_block(&model, &block, 12, 8, &EncodeOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantized_magnitude_shrinks_with_step(
        z in -50.0f64..50.0,
        mu in -1.0f64..1.0,
        d1 in 1e-4f64..1.0,
        f in 1.0f64..10.0,
    ) {
        let (a, b) = (quantize(z, mu, d1), quantize(z, mu, d1 * f));
        prop_assert!(b.abs() <= a.abs());
        prop_assert!((z - mu - a as f64 * d1).abs() <= d1 / 2.0 + 1e-12);
    }

    #[test]
    fn reconstruction_error_grows_with_step(seed in 0u64..50) {
        let model = small_model(10, 8, 16);
        let img = one_over_f_image(64, 64, seed, 40.0);
        let fine = psnr(&img, &model.reconstruct(&img, 0.001).unwrap()).unwrap();
        let coarse = psnr(&img, &model.reconstruct(&img, 0.2).unwrap()).unwrap();
        prop_assert!(fine > coarse);
    }
}
