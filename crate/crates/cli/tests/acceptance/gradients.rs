//! Finite-difference checks for every graph op and each model objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use webrpg_core::html::Page;
use webrpg_core::rp::{ElementId, RpPage, Vocabulary};
use webrpg_models::ar::{ArConfig, ArGenerator, ArNoise};
use webrpg_models::data::{Batch, PageExample};
use webrpg_models::dm::{DmConfig, DmGenerator, DmNoise};
use webrpg_models::embedding::{EmbedConfig, HashedBagEncoder, HtmlEmbedder, TagVocab};
use webrpg_models::vae::{standard_normal, uniform_vector, Vae, VaeConfig};
use webrpg_nn::layers::{LayerNorm, Linear, TransformerBlock};
use webrpg_nn::{grad_check, AttnSegment, GradCheckConfig, Graph, NnError, ParamStore, Tensor, Var, IGNORE};

use crate::{ensure, s, Outcome};

const TOL: f64 = 1e-3;
const D: usize = 8;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var, NnError> {
    let (r, c) = g.shape(x);
    let w = g.constant(Tensor::randn(r, c, 1.0, &mut rng(seed)));
    let y = g.mul(x, w)?;
    g.sum(y)
}

struct Suite {
    worst: f64,
    checked: usize,
}

impl Suite {
    fn check(
        &mut self,
        name: &str,
        store: &mut ParamStore<f64>,
        cfg: GradCheckConfig,
        f: impl FnMut(&mut Graph<f64>) -> Result<Var, NnError>,
    ) -> Result<(), String> {
        let r = grad_check(store, cfg, f).map_err(|e| format!("{name}: {e}"))?;
        ensure(r.checked > 0, || format!("{name}: nothing checked"))?;
        ensure(r.max_rel_err < TOL, || format!("{name}: relative error {:.2e}", r.max_rel_err))?;
        self.worst = self.worst.max(r.max_rel_err);
        self.checked += r.checked;
        Ok(())
    }
}

fn ops(suite: &mut Suite) -> Result<(), String> {
    let cfg = GradCheckConfig::default;
    let mut r = rng(1);

    let mut st = ParamStore::<f64>::new();
    let a = st.randn("a", 3, 4, 1.0, &mut r);
    let b = st.randn("b", 3, 4, 1.0, &mut r);
    let row = st.randn("row", 1, 4, 1.0, &mut r);
    suite.check("elementwise", &mut st, cfg(), |g| {
        let (a, b, row) = (g.param(a), g.param(b), g.param(row));
        let x = g.add(a, b)?;
        let x = g.mul(x, a)?;
        let x = g.sub(x, b)?;
        let x = g.add_row(x, row)?;
        let x = g.scale(x, 0.7)?;
        let x = g.scale_rows(x, vec![1.0, -2.0, 0.5])?;
        let t = g.tanh(x)?;
        let sg = g.sigmoid(b)?;
        let e = g.scale(a, 0.3)?;
        let e = g.exp(e)?;
        let ge = g.gelu(x)?;
        let mut y = g.add(t, sg)?;
        for z in [e, ge] {
            y = g.add(y, z)?;
        }
        weighted_sum(g, y, 2)
    })?;

    let mut st = ParamStore::<f64>::new();
    let a = st.add("a", Tensor::from_f64(1, 4, &[-1.0, -0.3, 0.4, 2.0]));
    suite.check("relu", &mut st, cfg(), |g| {
        let a = g.param(a);
        let y = g.relu(a)?;
        weighted_sum(g, y, 3)
    })?;

    let mut st = ParamStore::<f64>::new();
    let a = st.randn("a", 3, 5, 1.0, &mut r);
    let b = st.randn("b", 5, 2, 1.0, &mut r);
    let at = st.randn("at", 5, 3, 1.0, &mut r);
    let bt = st.randn("bt", 2, 5, 1.0, &mut r);
    suite.check("matmul", &mut st, cfg(), |g| {
        let (a, b, at, bt) = (g.param(a), g.param(b), g.param(at), g.param(bt));
        let x1 = g.matmul(a, b)?;
        let x2 = g.matmul_t(at, true, b, false)?;
        let x3 = g.matmul_t(a, false, bt, true)?;
        let x4 = g.matmul_t(at, true, bt, true)?;
        let mut y = g.add(x1, x2)?;
        for z in [x3, x4] {
            y = g.add(y, z)?;
        }
        weighted_sum(g, y, 5)
    })?;

    let mut st = ParamStore::<f64>::new();
    let x = st.randn("x", 4, 6, 2.0, &mut r);
    let gamma = st.randn("gamma", 1, 6, 1.0, &mut r);
    let beta = st.randn("beta", 1, 6, 1.0, &mut r);
    suite.check("layer_norm", &mut st, cfg(), |g| {
        let (x, gm, bt) = (g.param(x), g.param(gamma), g.param(beta));
        let y = g.layer_norm(x, gm, bt, 1e-5)?;
        weighted_sum(g, y, 7)
    })?;

    let mut st = ParamStore::<f64>::new();
    let a = st.randn("a", 4, 6, 1.0, &mut r);
    let b = st.randn("b", 4, 2, 1.0, &mut r);
    let c = st.randn("c", 1, 6, 1.0, &mut r);
    let table = st.randn("table", 7, 3, 1.0, &mut r);
    suite.check("shape ops", &mut st, cfg(), |g| {
        let (a, b, c, table) = (g.param(a), g.param(b), g.param(c), g.param(table));
        let x = g.slice_cols(a, 1, 3)?;
        let y = g.concat_cols(&[x, b, x])?;
        let y = g.slice_cols(y, 0, 6)?;
        let z = g.concat_rows(&[y, c, a])?;
        let z = g.slice_rows(z, 2, 6)?;
        let blend = g.blend_rows(z, c, vec![true, false, false, true, false, true])?;
        let gathered = g.gather_rows(table, vec![0, 3, 3, 6])?;
        let bag = g.embedding_bag(table, vec![1, 2, 2, 5, 0, 0], 3)?;
        let l1 = weighted_sum(g, blend, 9)?;
        let l2 = weighted_sum(g, gathered, 10)?;
        let l3 = weighted_sum(g, bag, 11)?;
        let l = g.add(l1, l2)?;
        g.add(l, l3)
    })?;

    // finite differences see through a detached copy, so check it exactly
    let held_grad = {
        let mut g = Graph::new(&st);
        let x = g.param(a);
        let held = g.detach(x);
        let l = weighted_sum(&mut g, held, 12).map_err(s)?;
        let grads = g.backward(l).map_err(s)?;
        grads.param(a).map_or(0.0, |t| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
    };
    ensure(held_grad == 0.0, || format!("gradient leaked through detach: {held_grad}"))?;

    let mut st = ParamStore::<f64>::new();
    let logits = st.randn("logits", 3, 9, 2.0, &mut r);
    let a = st.randn("a", 2, 3, 1.0, &mut r);
    let b = st.randn("b", 2, 3, 1.0, &mut r);
    let mu = st.randn("mu", 2, 4, 1.0, &mut r);
    let lv = st.randn("lv", 2, 4, 0.5, &mut r);
    suite.check("losses", &mut st, cfg(), |g| {
        let logits = g.param(logits);
        let ce = g.segmented_cross_entropy(logits, &[(0, 4), (4, 2), (6, 3)], vec![1, 0, 2, 3, IGNORE, 0, 0, 1, 1])?;
        let full = g.cross_entropy(logits, &[8, 0, 4])?;
        let (a, b) = (g.param(a), g.param(b));
        let se = g.squared_error(a, b)?;
        let (mu, lv) = (g.param(mu), g.param(lv));
        let kl = g.kl_normal(mu, lv)?;
        let z = g.gaussian_sample(mu, lv, Tensor::randn(2, 4, 1.0, &mut rng(13)))?;
        let zs = weighted_sum(g, z, 14)?;
        let m = g.mean(a)?;
        let mut l = g.add(ce, full)?;
        for t in [se, kl, zs, m] {
            l = g.add(l, t)?;
        }
        Ok(l)
    })?;

    let mut st = ParamStore::<f64>::new();
    let q = st.randn("q", 7, 8, 1.0, &mut r);
    let k = st.randn("k", 7, 8, 1.0, &mut r);
    let v = st.randn("v", 7, 8, 1.0, &mut r);
    let mem = st.randn("mem", 5, 8, 1.0, &mut r);
    let segs = [AttnSegment::square(0, 3), AttnSegment::square(3, 4)];
    let cross = [
        AttnSegment { q_start: 0, q_len: 3, k_start: 0, k_len: 2 },
        AttnSegment { q_start: 3, q_len: 4, k_start: 2, k_len: 3 },
    ];
    suite.check("attention", &mut st, cfg(), |g| {
        let (q, k, v, mem) = (g.param(q), g.param(k), g.param(v), g.param(mem));
        let a = g.attention(q, k, v, 2, &segs, false)?;
        let c = g.attention(q, k, v, 4, &segs, true)?;
        let x = g.attention(q, mem, mem, 2, &cross, false)?;
        let y = g.add(a, c)?;
        let y = g.add(y, x)?;
        weighted_sum(g, y, 16)
    })?;

    let mut st = ParamStore::<f64>::new();
    let lin = Linear::new(&mut st, &mut r, "lin", 6, 8);
    let ln = LayerNorm::new(&mut st, "ln", 8);
    let enc = TransformerBlock::new(&mut st, &mut r, "enc", 8, 2, false);
    let dec = TransformerBlock::new(&mut st, &mut r, "dec", 8, 2, true);
    let x = Tensor::randn(5, 6, 1.0, &mut r);
    let segs = [AttnSegment::square(0, 2), AttnSegment::square(2, 3)];
    let few = GradCheckConfig {
        max_entries: 8,
        ..GradCheckConfig::default()
    };
    suite.check("layers", &mut st, few, |g| {
        let x = g.constant(x.clone());
        let x = lin.forward(g, x)?;
        let m = enc.forward(g, x, &segs, false, None)?;
        let y = dec.forward(g, x, &segs, true, Some((m, &segs)))?;
        let y = ln.forward(g, y)?;
        weighted_sum(g, y, 19)
    })?;
    Ok(())
}

fn toy_embed() -> EmbedConfig {
    EmbedConfig {
        d: D,
        d_sem: D,
        tag_count: TagVocab::default().len(),
    }
}

fn toy_vae() -> VaeConfig {
    VaeConfig {
        latent: D,
        hidden: vec![8, 8, 8, 8],
        lambda_kl: 0.5,
        ..VaeConfig::default()
    }
}

fn toy_example(n: usize, rng: &mut ChaCha8Rng) -> PageExample {
    let vocab = Vocabulary::default();
    let items: String = (0..n).map(|i| format!("<p>item {i} text</p>")).collect();
    let page = Page::from_html(&format!("<div>{items}</div>")).expect("toy html");
    let mut rps = RpPage::new();
    for el in &page.elements {
        rps.insert(ElementId(el.id), uniform_vector(&vocab, rng));
    }
    let page = page.with_rps(rps).expect("legal");
    PageExample::from_page("toy", &page, &HashedBagEncoder { dim: D }, &TagVocab::default()).expect("example")
}

fn models(suite: &mut Suite) -> Result<(), String> {
    let vocab = Vocabulary::default();
    let cfg = || GradCheckConfig {
        max_entries: 6,
        ..GradCheckConfig::default()
    };

    let mut r = rng(21);
    let mut st = ParamStore::<f64>::new();
    let vae = Vae::new(&mut st, &mut r, "vae", &vocab, toy_vae()).map_err(s)?;
    let vectors: Vec<_> = (0..3).map(|_| uniform_vector(&vocab, &mut r)).collect();
    let eps = standard_normal::<f64>(3, D, &mut r);
    suite.check("VAE objective", &mut st, cfg(), |g| {
        Ok(vae.forward(g, &vectors, eps.clone()).expect("vae forward").loss)
    })?;

    let mut st = ParamStore::<f64>::new();
    let embed = HtmlEmbedder::new(&mut st, &mut r, "embed", toy_embed());
    let ex = toy_example(3, &mut r);
    suite.check("HTML embedding", &mut st, cfg(), |g| {
        let h = embed.forward(g, &ex.features).expect("embed");
        weighted_sum(g, h, 22)
    })?;

    let mut st = ParamStore::<f64>::new();
    let arc = ArConfig {
        d: D,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ..ArConfig::default()
    };
    let ar = ArGenerator::new(&mut st, &mut r, &vocab, toy_embed(), toy_vae(), arc).map_err(s)?;
    let (a, b) = (toy_example(1, &mut r), toy_example(2, &mut r));
    let batch = Batch::new(&[&a, &b]).map_err(s)?;
    let noise = ArNoise::draw(&batch, D, &mut r);
    suite.check("AR objective", &mut st, cfg(), |g| Ok(ar.loss(g, &batch, &noise).expect("ar loss").loss))?;

    let mut st = ParamStore::<f64>::new();
    let dmc = DmConfig {
        d: D,
        heads: 2,
        layers: 3,
        steps: 20,
        ..DmConfig::default()
    };
    let dm = DmGenerator::new(&mut st, &mut r, &vocab, toy_embed(), toy_vae(), dmc).map_err(s)?;
    let (a, b) = (toy_example(2, &mut r), toy_example(3, &mut r));
    let batch = Batch::new(&[&a, &b]).map_err(s)?;
    let noise = DmNoise::draw(&batch, D, 20, &mut r);
    suite.check("DM objective", &mut st, cfg(), |g| Ok(dm.loss(g, &batch, &noise).expect("dm loss").loss))?;
    Ok(())
}

pub fn suite() -> Outcome {
    let mut suite = Suite { worst: 0.0, checked: 0 };
    ops(&mut suite)?;
    models(&mut suite)?;
    Ok(format!(
        "{} entries over every graph op and the VAE, AR and DM objectives, worst relative error {:.1e} (tolerance {TOL:.0e})",
        suite.checked, suite.worst
    ))
}
