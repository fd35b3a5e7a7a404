mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::naive_correlate;
use vessel3d::featurize::{convolve3, featurize_full, featurize_voxels, DEFAULT_MAX_ROW_LEN};
use vessel3d::pyramid::{build_pyramid, PyramidConfig};
use vessel3d::sparse_coding::Dictionary;
use vessel3d::volume_io::Volume3;

fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume3 {
    Volume3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
}

fn random_dictionary(rng: &mut ChaCha8Rng, atoms: usize, n: usize) -> Dictionary {
    Dictionary::normalized(
        (0..atoms)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn convolution_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..200 {
        let dims = [rng.random_range(1..=9), rng.random_range(1..=9), rng.random_range(1..=9)];
        let vol = random_volume(&mut rng, dims);
        let filter: Vec<f64> = (0..125).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = convolve3(&vol, &filter, 5).unwrap();
        let slow = naive_correlate(&vol, &filter, 5);
        for (i, (&a, &b)) in fast.data().iter().zip(&slow).enumerate() {
            assert!(close(a as f64, b, 1e-5), "case {case} voxel {i}: {a} vs {b}");
        }
    }
}

#[test]
fn convolution_is_thread_count_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vol = random_volume(&mut rng, [9, 9, 9]);
    let filter: Vec<f64> = (0..125).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| convolve3(&vol, &filter, 5).unwrap())
    };
    let serial = run(1);
    let parallel = run(4);
    let bits = |v: &Volume3| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&serial), bits(&parallel));
}

#[test]
fn features_compose_pyramid_and_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vol = random_volume(&mut rng, [11, 9, 10]);
    let dict = random_dictionary(&mut rng, 6, 125);
    let cfg = PyramidConfig::default();
    let fm = featurize_full(&vol, "v", &dict, &cfg, DEFAULT_MAX_ROW_LEN).unwrap();
    assert_eq!(fm.num_rows(), vol.len());
    let pyr = build_pyramid(&vol, &cfg).unwrap();
    for level in 0..cfg.scales {
        let lv = pyr.level(level);
        for (j, atom) in dict.atoms().enumerate() {
            let response = naive_correlate(lv, atom, 5);
            for (r, vox) in fm.voxels().iter().enumerate() {
                let s = 2usize.pow(level as u32);
                let at = lv.index(vox.x / s, vox.y / s, vox.z / s);
                let got = fm.row(r)[level * dict.d() + j] as f64;
                assert!(close(got, response[at], 1e-5), "level {level} atom {j} row {r}");
            }
        }
    }
}

#[test]
fn features_are_linear_in_intensity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random_volume(&mut rng, [8, 8, 8]);
    let b = random_volume(&mut rng, [8, 8, 8]);
    let sum = Volume3::new([8, 8, 8], a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x - y).collect()).unwrap();
    let dict = random_dictionary(&mut rng, 4, 125);
    let cfg = PyramidConfig::default();
    let f = |v: &Volume3| featurize_full(v, "v", &dict, &cfg, DEFAULT_MAX_ROW_LEN).unwrap();
    let (fa, fb, fs) = (f(&a), f(&b), f(&sum));
    for ((x, y), s) in fa.values().iter().zip(fb.values()).zip(fs.values()) {
        assert!(close(*s as f64, 2.0 * *x as f64 - *y as f64, 1e-4));
    }
}

#[test]
fn row_lengths_follow_scales_times_atoms() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let vol = random_volume(&mut rng, [12, 12, 12]);
    let query = [[0, 0, 0], [5, 6, 7], [11, 11, 11]];
    let cfg = PyramidConfig { scales: 2, ..Default::default() };
    for (atoms, expected) in [(512, 1024), (64, 128)] {
        let dict = random_dictionary(&mut rng, atoms, 125);
        let fm = featurize_voxels(&vol, "v", &dict, &cfg, &query, DEFAULT_MAX_ROW_LEN).unwrap();
        assert_eq!(fm.row_len(), expected);
        assert!(fm.rows().all(|r| r.len() == expected));
    }
    let dict = random_dictionary(&mut rng, 64, 125);
    assert!(featurize_voxels(&vol, "v", &dict, &cfg, &query, 100).is_err());
}

#[test]
fn masked_out_queries_are_rejected() {
    let vol = Volume3::filled([6, 6, 6], 1.0).unwrap();
    let mut mask = vec![true; 216];
    mask[vol.index(1, 2, 3)] = false;
    let vol = vol.with_mask(mask).unwrap();
    let dict = Dictionary::from_atoms(vec![{
        let mut a = vec![0.0; 125];
        a[62] = 1.0;
        a
    }])
    .unwrap();
    let cfg = PyramidConfig::default();
    assert!(featurize_voxels(&vol, "v", &dict, &cfg, &[[1, 2, 3]], DEFAULT_MAX_ROW_LEN).is_err());
    assert!(featurize_voxels(&vol, "v", &dict, &cfg, &[[6, 0, 0]], DEFAULT_MAX_ROW_LEN).is_err());
    assert_eq!(featurize_full(&vol, "v", &dict, &cfg, DEFAULT_MAX_ROW_LEN).unwrap().num_rows(), 215);
}
