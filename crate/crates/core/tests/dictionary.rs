use vessel3d::evaluation::{render_phantom, PhantomSpec};
use vessel3d::pyramid::{build_pyramid, GaussianPyramid, PyramidConfig};
use vessel3d::sparse_coding::{train_dictionary, DictLearnConfig};
use vessel3d::volume_io::Volume3;

fn single_level(vol: &Volume3) -> Vec<GaussianPyramid> {
    vec![build_pyramid(vol, &PyramidConfig { scales: 1, ..Default::default() }).unwrap()]
}

fn phantom_pyramids(dims: [usize; 3]) -> Vec<GaussianPyramid> {
    let spec = PhantomSpec {
        dims,
        helix_radius_range: [2.0, 4.0],
        blob_radius_range: [2.0, 4.0],
        ..Default::default()
    };
    let ph = render_phantom(&spec).unwrap();
    vec![build_pyramid(&ph.volume, &PyramidConfig::default()).unwrap()]
}

#[test]
fn ramp_volume_yields_the_ramp_atom() {
    // Every centered patch of a linear ramp in x is the same pattern.
    let vol = Volume3::from_fn([12, 12, 12], |x, _, _| x as f32).unwrap();
    let cfg = DictLearnConfig {
        atoms: 1,
        lambda: 0.1,
        num_patches: 2000,
        batch_size: 100,
        ..Default::default()
    };
    let trained = train_dictionary(&single_level(&vol), &cfg).unwrap();
    let ramp: Vec<f64> = (0..125).map(|i| (i % 5) as f64 - 2.0).collect();
    let norm = ramp.iter().map(|v| v * v).sum::<f64>().sqrt();
    let atom = trained.dictionary.atom(0);
    let cosine: f64 = atom.iter().zip(&ramp).map(|(a, r)| a * r / norm).sum();
    assert!(cosine.abs() >= 0.999, "cosine {cosine}");
}

#[test]
fn atoms_stay_unit_norm() {
    let pyramids = phantom_pyramids([24, 24, 24]);
    for (atoms, lambda) in [(1, 0.01), (8, 0.1), (16, 1.0), (4, 1e4)] {
        let cfg = DictLearnConfig {
            atoms,
            lambda,
            num_patches: 1500,
            batch_size: 128,
            epochs: 2,
            seed: atoms as u64,
            ..Default::default()
        };
        let trained = train_dictionary(&pyramids, &cfg).unwrap();
        let dev = trained.dictionary.max_norm_deviation();
        assert!(dev < 1e-6, "atoms {atoms} lambda {lambda}: deviation {dev}");
    }
}

#[test]
fn objective_trends_down() {
    let pyramids = phantom_pyramids([32, 32, 32]);
    let cfg = DictLearnConfig {
        atoms: 16,
        lambda: 1.0,
        num_patches: 12_800,
        batch_size: 128,
        ..Default::default()
    };
    let trace = train_dictionary(&pyramids, &cfg).unwrap().trace;
    assert_eq!(trace.len(), 100);
    let head: f64 = trace[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = trace[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "head {head} tail {tail}");
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let pyramids = phantom_pyramids([24, 24, 24]);
    let cfg = DictLearnConfig {
        atoms: 8,
        num_patches: 1000,
        batch_size: 100,
        seed: 3,
        ..Default::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_dictionary(&pyramids, &cfg).unwrap().dictionary.to_bytes().unwrap())
    };
    assert_eq!(run(1), run(4));
    let other = train_dictionary(&pyramids, &DictLearnConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(run(2), other.dictionary.to_bytes().unwrap());
}
