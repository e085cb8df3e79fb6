use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webrpg_core::html::Page;
use webrpg_core::rp::{ElementId, RpName, RpPage, RpVector, Vocabulary};
use webrpg_eval::classifier::{FidClassifier, FidClassifierConfig, FidVariant};
use webrpg_eval::noise::NoiseConfig;
use webrpg_models::data::PageExample;
use webrpg_models::embedding::{EmbedConfig, HashedBagEncoder, TagVocab};
use webrpg_models::train::TrainConfig;
use webrpg_models::vae::{uniform_vector, Vae, VaeConfig};
use webrpg_nn::{OptimizerConfig, ParamStore};

const D: usize = 16;

fn embed() -> EmbedConfig {
    EmbedConfig {
        d: D,
        d_sem: D,
        tag_count: TagVocab::default().len(),
    }
}

fn vae(store: &mut ParamStore<f32>) -> Vae {
    let cfg = VaeConfig {
        latent: D,
        hidden: vec![32, 32, 32, 32],
        ..Default::default()
    };
    Vae::new(store, &mut ChaCha8Rng::seed_from_u64(1), "vae", &Vocabulary::default(), cfg).unwrap()
}

fn config(variant: FidVariant) -> FidClassifierConfig {
    FidClassifierConfig {
        variant,
        d: D,
        heads: 2,
        layers: 2,
        ..Default::default()
    }
}

/// A column of equal-height rows sharing one style.
fn stacked_page(n: usize, rng: &mut ChaCha8Rng) -> PageExample {
    let items: String = (0..n).map(|i| format!("<p>row {i}</p>")).collect();
    let page = Page::from_html(&format!("<div>{items}</div>")).unwrap();
    let style = uniform_vector(&Vocabulary::default(), rng);
    let h = rng.random_range(10..30u16);
    let mut rps = RpPage::new();
    for el in &page.elements {
        let mut v = style;
        let row = el.id as u16 - 1;
        v[RpName::Left].0 = 0;
        v[RpName::Top].0 = if row == 0 { 0 } else { (row - 1) * h };
        v[RpName::Width].0 = 300;
        v[RpName::Height].0 = if row == 0 { h * n as u16 } else { h };
        rps.insert(ElementId(el.id), v);
    }
    let page = page.with_rps(rps).unwrap();
    PageExample::from_page("p", &page, &HashedBagEncoder { dim: D }, &TagVocab::default()).unwrap()
}

#[test]
fn variants_ignore_masked_parameters() {
    let mut vae_store = ParamStore::new();
    let vae = vae(&mut vae_store);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let page = stacked_page(6, &mut rng);
    let vocab = Vocabulary::default();
    let restyled: Vec<RpVector> = page
        .vectors
        .iter()
        .map(|v| {
            let mut w = uniform_vector(&vocab, &mut rng);
            for p in RpName::LAYOUT {
                w[p] = v[p];
            }
            w
        })
        .collect();
    let relaid: Vec<RpVector> = page
        .vectors
        .iter()
        .map(|v| {
            let mut w = *v;
            for p in RpName::LAYOUT {
                w[p].0 = rng.random_range(0..500);
            }
            w
        })
        .collect();
    for (variant, changed, should_match) in [
        (FidVariant::Layout, &restyled, true),
        (FidVariant::Style, &relaid, true),
        (FidVariant::Overall, &restyled, false),
        (FidVariant::Layout, &relaid, false),
    ] {
        let mut store = ParamStore::new();
        let clf = FidClassifier::new(&mut store, &mut ChaCha8Rng::seed_from_u64(2), config(variant), embed(), D).unwrap();
        let a = clf.prepare(&vae_store, &vae, &page.features, &page.vectors).unwrap();
        let b = clf.prepare(&vae_store, &vae, &page.features, changed).unwrap();
        let fa = clf.features(&store, &[a]).unwrap();
        let fb = clf.features(&store, &[b]).unwrap();
        assert_eq!(fa == fb, should_match, "{variant:?}");
        assert_eq!(fa[0].len(), D);
    }
}

#[test]
fn batching_does_not_mix_pages() {
    let mut vae_store = ParamStore::new();
    let vae = vae(&mut vae_store);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pages: Vec<PageExample> = [3, 9, 5].iter().map(|&n| stacked_page(n, &mut rng)).collect();
    let mut store = ParamStore::new();
    let clf = FidClassifier::new(&mut store, &mut rng, config(FidVariant::Overall), embed(), D).unwrap();
    let inputs: Vec<_> = pages
        .iter()
        .map(|p| clf.prepare(&vae_store, &vae, &p.features, &p.vectors).unwrap())
        .collect();
    let together = clf.features(&store, &inputs).unwrap();
    for (i, input) in inputs.iter().enumerate() {
        let alone = clf.features(&store, std::slice::from_ref(input)).unwrap();
        for (a, b) in alone[0].iter().zip(&together[i]) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn learns_to_separate_polluted_pages() {
    let mut vae_store = ParamStore::new();
    let vae = vae(&mut vae_store);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let corpus: Vec<PageExample> = (0..40).map(|_| stacked_page(rng.random_range(6..12), &mut rng)).collect();
    let cfg = TrainConfig {
        steps: 1200,
        batch: 4,
        seed: 3,
        optimizer: OptimizerConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        log_every: 0,
    };
    let clf_cfg = FidClassifierConfig {
        noise: NoiseConfig::default(),
        holdout: 0.5,
        ..config(FidVariant::Overall)
    };
    let mut store = ParamStore::new();
    let untrained = {
        let mut s = ParamStore::new();
        let none = TrainConfig { steps: 0, ..cfg.clone() };
        FidClassifier::train(&mut s, clf_cfg.clone(), embed(), &vae_store, &vae, &Vocabulary::default(), &corpus, &none).unwrap()
    };
    let trained = FidClassifier::train(&mut store, clf_cfg, embed(), &vae_store, &vae, &Vocabulary::default(), &corpus, &cfg).unwrap();
    println!("untrained {:.3} trained {:.3}", untrained.holdout_accuracy, trained.holdout_accuracy);
    assert_eq!(trained.holdout_pages, 20);
    assert!((0.25..=0.75).contains(&untrained.holdout_accuracy));
    assert!(trained.holdout_accuracy >= 0.8, "{}", trained.holdout_accuracy);
    let again = FidClassifier::train(&mut ParamStore::new(), trained.classifier.config.clone(), embed(), &vae_store, &vae, &Vocabulary::default(), &corpus, &cfg).unwrap();
    assert_eq!(again.losses, trained.losses);
}
