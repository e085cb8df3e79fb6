//! Exact identities and brute-force oracles: vocabulary, serialization,
//! visual complexity, style consistency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webrpg_core::html::{DomNode, Page};
use webrpg_core::rp::{
    ElementId, PadPolicy, RpName, RpPage, RpTokenId, RpVector, VocabCategory, Vocabulary, VOCAB_SIZE,
};
use webrpg_core::vc::vc_total;
use webrpg_eval::sc_score;
use webrpg_models::vae::uniform_vector;

use crate::{ensure, s, Outcome};

pub fn vocabulary() -> Outcome {
    let mut pairs = 0;
    for policy in [PadPolicy::Never, PadPolicy::NonLayout, PadPolicy::Anywhere] {
        let vocab = Vocabulary::default().with_pad_policy(policy);
        let mut covered = vec![false; VOCAB_SIZE];
        for p in RpName::ALL {
            for t in 0..VOCAB_SIZE as u16 {
                let tok = RpTokenId(t);
                match vocab.decode(p, tok) {
                    Ok(v) => {
                        let back = vocab.encode(p, v).map_err(s)?;
                        ensure(back == tok, || format!("{policy:?} {p:?}: {t} -> {v:?} -> {}", back.0))?;
                        covered[t as usize] = true;
                        pairs += 1;
                    }
                    Err(_) => ensure(!vocab.is_legal(p, tok), || format!("{p:?} {t} legal but undecodable"))?,
                }
            }
        }
        // PAD is only reachable when some slot allows it
        let need = if policy == PadPolicy::Never { VOCAB_SIZE - 1 } else { VOCAB_SIZE };
        let got = covered.iter().filter(|&&c| c).count();
        ensure(got == need, || format!("{policy:?}: {got} of {need} tokens decode under some parameter"))?;
    }
    let mut ranges: Vec<_> = VocabCategory::ALL.iter().map(|c| c.range()).collect();
    ranges.sort_by_key(|r| *r.start());
    let mut next = 0u16;
    for r in &ranges {
        ensure(*r.start() == next, || format!("category ranges not contiguous at {next}"))?;
        next = r.end() + 1;
    }
    let total: usize = VocabCategory::ALL.iter().map(|c| c.len()).sum();
    ensure(total == VOCAB_SIZE && VOCAB_SIZE == 1993, || format!("category sizes sum to {total}"))?;
    Ok(format!("{pairs} legal (policy, parameter, token) triples round-trip; 9 categories tile 0..{total}"))
}

pub fn round_trips() -> Outcome {
    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut elements = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..=128);
        let mut id = 0u32;
        let page: RpPage = (0..n)
            .map(|_| {
                id += rng.random_range(1..4);
                (ElementId(id), uniform_vector(&vocab, &mut rng))
            })
            .collect();
        elements += n;
        let css = vocab.emit_css(&page).map_err(s)?;
        let from_css = vocab.parse_css_rules(&css).map_err(s)?;
        ensure(from_css == page, || format!("page {i}: CSS round trip changed the page"))?;
        let json = vocab.to_json(&page).map_err(s)?;
        let from_json = vocab.from_json(&json).map_err(s)?;
        ensure(from_json == page, || format!("page {i}: JSON round trip changed the page"))?;
    }
    Ok(format!("1000 pages, {elements} elements, identical after CSS and JSON round trips"))
}

struct RawPage {
    parents: Vec<Option<usize>>,
    boxes: Vec<[u16; 4]>,
    colors: Vec<u16>,
    bgs: Vec<u16>,
}

fn random_raw(rng: &mut ChaCha8Rng, n: usize) -> RawPage {
    let mut parents = vec![None];
    parents.extend((1..n).map(|k| Some(rng.random_range(k.saturating_sub(5)..k))));
    // a coarse grid so that edges line up often
    let grid = |rng: &mut ChaCha8Rng| rng.random_range(0..6u16) * 40;
    let boxes = (0..n)
        .map(|_| [grid(rng), grid(rng), rng.random_range(1..4u16) * 20, rng.random_range(1..4u16) * 20])
        .collect();
    let colors = (0..n).map(|_| 1921 + rng.random_range(0..6u16)).collect();
    let bgs = (0..n).map(|_| 1921 + rng.random_range(0..4u16)).collect();
    RawPage { parents, boxes, colors, bgs }
}

/// Build the DOM from parent links; rows are re-keyed by pre-order id.
fn to_page(raw: &RawPage) -> Page {
    fn build(i: usize, parents: &[Option<usize>], order: &mut Vec<usize>) -> DomNode {
        order.push(i);
        let mut node = DomNode::new("div");
        for (k, p) in parents.iter().enumerate() {
            if *p == Some(i) {
                node.children.push(build(k, parents, order));
            }
        }
        node
    }
    let mut order = Vec::new();
    let mut root = build(0, &raw.parents, &mut order);
    let page = Page::from_tree(&mut root);
    let rps: RpPage = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let b = raw.boxes[i];
            let v = RpVector::from_tokens([
                b[0], b[1], b[2], b[3], 1967, 1973, 16, 1979, 1980, 1986, 1988, raw.colors[i], raw.bgs[i],
            ]);
            (ElementId(pos as u32 + 1), v)
        })
        .collect();
    page.with_rps(rps).expect("legal vectors")
}

fn count_distinct<T: PartialEq>(xs: &[T]) -> usize {
    (0..xs.len()).filter(|&i| !xs[..i].contains(&xs[i])).count()
}

fn bf_color(raw: &RawPage) -> f64 {
    let n = raw.colors.len() as f64;
    (count_distinct(&raw.colors) as f64 + count_distinct(&raw.bgs) as f64 - 2.0) / (2.0 * n)
}

fn bf_size(raw: &RawPage) -> f64 {
    let n = raw.parents.len();
    let mut terms = Vec::new();
    for p in 0..n {
        let sizes: Vec<(u16, u16)> = (0..n)
            .filter(|&k| raw.parents[k] == Some(p))
            .map(|k| (raw.boxes[k][2], raw.boxes[k][3]))
            .collect();
        if !sizes.is_empty() {
            terms.push((count_distinct(&sizes) as f64 - 1.0) / sizes.len() as f64);
        }
    }
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

fn bf_alignment(raw: &RawPage) -> f64 {
    let n = raw.parents.len();
    let leaves: Vec<[i64; 4]> = (0..n)
        .filter(|&i| !raw.parents.contains(&Some(i)))
        .map(|i| {
            let b = raw.boxes[i].map(i64::from);
            [b[0], b[1], b[0] + b[2], b[1] + b[3]]
        })
        .collect();
    let m = leaves.len();
    if m < 2 {
        return 0.0;
    }
    let mut aligned = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i != j && (0..4).any(|e| leaves[i][e] == leaves[j][e]) {
                aligned += 1;
            }
        }
    }
    1.0 - aligned as f64 / (m * (m - 1)) as f64
}

pub fn vc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = rng.random_range(2..80);
        let raw = random_raw(&mut rng, n);
        let r = vc_total(&to_page(&raw)).map_err(s)?;
        for (name, got, want) in [
            ("vc_color", r.vc_color, bf_color(&raw)),
            ("vc_size", r.vc_size, bf_size(&raw)),
            ("vc_alignment", r.vc_alg, bf_alignment(&raw)),
        ] {
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err < 1e-9, || format!("page {i} {name}: {got} vs oracle {want}"))?;
        }
    }
    Ok(format!("20 pages, max deviation from brute force {worst:.1e} (tolerance 1e-9)"))
}

/// Page with style pool of size `styles` so that subsets actually form.
fn styled_page(n: usize, styles: usize, rng: &mut ChaCha8Rng) -> RpPage {
    let vocab = Vocabulary::default();
    let pool: Vec<RpVector> = (0..styles).map(|_| uniform_vector(&vocab, rng)).collect();
    (1..=n as u32)
        .map(|id| {
            let mut v = uniform_vector(&vocab, rng);
            let st = pool[rng.random_range(0..styles)];
            for p in RpName::STYLE {
                v[p] = st[p];
            }
            (ElementId(id), v)
        })
        .collect()
}

/// Enumerate every subset as a bitmask and keep the maximal same-style ones.
fn brute_subsets(page: &RpPage) -> Vec<u32> {
    let keys: Vec<_> = page.vectors().map(|v| v.style_key()).collect();
    let n = keys.len();
    let mut out: Vec<u32> = (1u32..(1 << n))
        .filter(|&mask| {
            let first = mask.trailing_zeros() as usize;
            (0..n).all(|i| ((mask >> i) & 1 == 1) == (keys[i] == keys[first]))
        })
        .collect();
    // summation order: by first member
    out.sort_by_key(|m| m.trailing_zeros());
    out
}

fn brute_sc(real: &RpPage, gen: &RpPage) -> f64 {
    let gs = brute_subsets(gen);
    let mut total = 0.0;
    for s in brute_subsets(real) {
        let mut best: f64 = 0.0;
        for &h in &gs {
            let inter = (s & h).count_ones() as usize;
            let union = (s | h).count_ones() as usize;
            best = best.max((s.count_ones() as usize * inter) as f64 / union as f64);
        }
        total += best;
    }
    total / real.len() as f64
}

pub fn sc_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = 0;
    for n in 1..=10 {
        for _ in 0..100 {
            let real = styled_page(n, rng.random_range(1..=n), &mut rng);
            let gen = styled_page(n, rng.random_range(1..=n), &mut rng);
            for (a, b) in [(&real, &gen), (&gen, &real), (&real, &real)] {
                let (got, want) = (sc_score(a, b).map_err(s)?, brute_sc(a, b));
                ensure(got == want, || format!("{n} elements: {got} vs brute force {want}"))?;
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} page pairs with 1..=10 elements match exhaustive subset matching exactly"))
}
