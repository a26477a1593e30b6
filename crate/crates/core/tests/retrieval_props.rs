use dynloc::raster::{Raster, RgbImage};
use dynloc::retrieval::{describe, find_closest_images, GlobalDescriptor};
use proptest::prelude::*;

fn oracle_dot(a: &GlobalDescriptor, b: &GlobalDescriptor) -> f64 {
    a.vector().iter().zip(b.vector()).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

fn any_vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn retrieval_is_a_prefix_of_the_brute_force_ranking(
        query in any_vector(16),
        index in prop::collection::vec(any_vector(16), 1..40),
        k in 1usize..50,
    ) {
        let q = GlobalDescriptor::ingested(query).unwrap();
        let index: Vec<(String, GlobalDescriptor)> = index
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("db{i:03}"), GlobalDescriptor::ingested(v).unwrap()))
            .collect();
        let got = find_closest_images(&q, &index, k).unwrap();
        prop_assert_eq!(got.len(), k.min(index.len()));
        let score = |id: &str| oracle_dot(&q, &index.iter().find(|(i, _)| i == id).unwrap().1);
        let mut brute: Vec<(f64, &str)> = index.iter().map(|(id, d)| (oracle_dot(&q, d), id.as_str())).collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        // Same ranking up to float ties: position by position the scores agree.
        for (pos, id) in got.iter().enumerate() {
            prop_assert!((score(id) - brute[pos].0).abs() < 1e-6, "rank {} holds {}", pos, id);
        }
        let distinct: std::collections::BTreeSet<&&str> = got.iter().collect();
        prop_assert_eq!(distinct.len(), got.len());
    }

    #[test]
    fn describe_is_deterministic(seed in any::<u64>(), w in 8usize..64, h in 8usize..64) {
        let mut state = seed;
        let img: RgbImage = Raster::from_fn(w, h, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (state >> 33).to_le_bytes();
            [b[0], b[1], b[2]]
        });
        let copy = img.clone();
        let a = describe(&img);
        let b = describe(&copy);
        let bits = |d: &GlobalDescriptor| d.vector().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}
