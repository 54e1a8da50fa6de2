use proptest::prelude::*;
use weldqa_core::synth::{generate, Defect, DefectMix, GenConfig, Interference};
use weldqa_core::Verdict;

fn config(seed: u64, width: usize, height: usize, nf: usize, ne: usize, noisy: bool) -> GenConfig {
    GenConfig {
        width,
        height,
        interference: if noisy { Interference::all() } else { Interference::none() },
        ..GenConfig::new(seed, nf, ne)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn any_valid_geometry_generates_labelled_scans(
        seed in any::<u64>(),
        height in 16usize..60,
        extra in 1usize..300,
        nf in 0usize..3,
        ne in 0usize..4,
        noisy in any::<bool>(),
    ) {
        let width = height + extra;
        let cfg = config(seed, width, height, nf, ne, noisy);
        let out = generate(&cfg).unwrap();
        prop_assert_eq!(out.len(), nf + ne);
        prop_assert_eq!(out.iter().filter(|g| g.verdict == Verdict::Erroneous).count(), ne);
        for g in &out {
            prop_assert_eq!((g.scan.width(), g.scan.height()), (width, height));
            prop_assert_eq!(g.defects.is_empty(), g.verdict == Verdict::Faultless);
        }
        prop_assert_eq!(generate(&cfg).unwrap(), out);
    }

    #[test]
    fn single_defect_mix_only_injects_that_defect(seed in any::<u64>(), k in 0usize..4) {
        let defect = Defect::ALL[k];
        let cfg = GenConfig { defect_mix: DefectMix::only(defect), ..config(seed, 400, 50, 0, 3, true) };
        for g in generate(&cfg).unwrap() {
            prop_assert_eq!(&g.defects, &vec![defect]);
        }
    }
}

#[test]
fn ids_follow_seed_and_index() {
    let a = generate(&config(9, 300, 40, 3, 3, true)).unwrap();
    let b = generate(&config(9, 300, 40, 3, 3, true)).unwrap();
    assert_eq!(a, b);
    let ids: Vec<_> = a.iter().map(|g| g.scan.id().to_string()).collect();
    assert_eq!(ids, ["s9-0000", "s9-0001", "s9-0002", "s9-0003", "s9-0004", "s9-0005"]);
}
