use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webrpg_core::html::{normalize_layout, DomNode, Page};
use webrpg_core::rp::{ElementId, RpName, RpPage, RpTokenId, RpVector};
use webrpg_core::vc::{vc_alignment, vc_color, vc_size, vc_total};

struct Raw {
    parents: Vec<Option<usize>>,
    boxes: Vec<[u16; 4]>,
    colors: Vec<u16>,
    bgs: Vec<u16>,
}

/// Random page in pre-order: node k's parent is some earlier node.
fn random_raw(rng: &mut ChaCha8Rng, n: usize) -> Raw {
    let mut parents = vec![None];
    parents.extend((1..n).map(|k| Some(rng.random_range(k.saturating_sub(4)..k))));
    // Few distinct coordinates so that alignments actually occur.
    let grid = |rng: &mut ChaCha8Rng| rng.random_range(0..6u16) * 40;
    let boxes = (0..n)
        .map(|_| [grid(rng), grid(rng), rng.random_range(1..4u16) * 20, rng.random_range(1..4u16) * 20])
        .collect();
    let colors = (0..n).map(|_| 1921 + rng.random_range(0..5u16)).collect();
    let bgs = (0..n).map(|_| 1921 + rng.random_range(0..3u16)).collect();
    Raw { parents, boxes, colors, bgs }
}

fn to_page(raw: &Raw) -> Page {
    let n = raw.parents.len();
    // Parents always precede children, and children of a node are appended in
    // increasing index order, so building the tree this way keeps pre-order
    // equal to index order only when each node's subtree is contiguous.
    // Rebuild the pre-order explicitly and permute the rows to match.
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
    let mut order = Vec::with_capacity(n);
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
    page.with_rps(rps).unwrap()
}

// Brute-force evaluators working on the raw, unordered representation.

fn bf_color(raw: &Raw) -> f64 {
    let distinct = |xs: &[u16]| {
        let mut c = 0;
        for i in 0..xs.len() {
            if !xs[..i].contains(&xs[i]) {
                c += 1;
            }
        }
        c
    };
    let n = raw.colors.len() as f64;
    (distinct(&raw.colors) as f64 + distinct(&raw.bgs) as f64 - 2.0) / (2.0 * n)
}

fn bf_size(raw: &Raw) -> f64 {
    let n = raw.parents.len();
    let mut terms = Vec::new();
    for p in 0..n {
        let kids: Vec<usize> = (0..n).filter(|&k| raw.parents[k] == Some(p)).collect();
        if kids.is_empty() {
            continue;
        }
        let mut ds = 0;
        for (a, &k) in kids.iter().enumerate() {
            let size = (raw.boxes[k][2], raw.boxes[k][3]);
            if kids[..a].iter().all(|&j| (raw.boxes[j][2], raw.boxes[j][3]) != size) {
                ds += 1;
            }
        }
        terms.push((ds as f64 - 1.0) / kids.len() as f64);
    }
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

fn bf_alignment(raw: &Raw) -> f64 {
    let n = raw.parents.len();
    let leaves: Vec<[u16; 4]> = (0..n)
        .filter(|&i| !raw.parents.contains(&Some(i)))
        .map(|i| raw.boxes[i])
        .collect();
    let m = leaves.len();
    if m < 2 {
        return 0.0;
    }
    let mut alg = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (a, b) = (leaves[i], leaves[j]);
            let edges_a = [a[0] as i64, a[1] as i64, a[0] as i64 + a[2] as i64, a[1] as i64 + a[3] as i64];
            let edges_b = [b[0] as i64, b[1] as i64, b[0] as i64 + b[2] as i64, b[1] as i64 + b[3] as i64];
            if (0..4).any(|e| edges_a[e] == edges_b[e]) {
                alg += 1.0;
            }
        }
    }
    1.0 - alg / (m * (m - 1)) as f64
}

#[test]
fn vc_matches_brute_force_on_random_pages() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let n = rng.random_range(2..60);
        let raw = random_raw(&mut rng, n);
        let page = to_page(&raw);
        let r = vc_total(&page).unwrap();
        assert!((r.vc_color - bf_color(&raw)).abs() < 1e-9);
        assert!((r.vc_size - bf_size(&raw)).abs() < 1e-9);
        assert!((r.vc_alg - bf_alignment(&raw)).abs() < 1e-9);
        assert!((r.vc_total - (r.vc_color + r.vc_size + r.vc_alg)).abs() < 1e-12);
        assert!(r.vc_color >= 0.0);
        assert!((0.0..=1.0).contains(&r.vc_size) && (0.0..=1.0).contains(&r.vc_alg));
    }
}

fn map_rps(page: &Page, f: impl Fn(&mut RpVector)) -> Page {
    let rps: RpPage = page
        .rps
        .as_ref()
        .unwrap()
        .iter()
        .map(|(id, v)| {
            let mut v = *v;
            f(&mut v);
            (id, v)
        })
        .collect();
    Page { rps: Some(rps), ..page.clone() }
}

#[test]
fn alignment_invariant_under_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let raw = random_raw(&mut rng, 30);
        let page = to_page(&raw);
        let shifted = map_rps(&page, |v| {
            v[RpName::Left] = RpTokenId(v[RpName::Left].0 + 37);
            v[RpName::Top] = RpTokenId(v[RpName::Top].0 + 11);
        });
        let a = vc_alignment(&page).unwrap();
        assert_eq!(a, vc_alignment(&shifted).unwrap());
        assert_eq!(a, vc_alignment(&normalize_layout(&shifted).unwrap()).unwrap());
    }
}

#[test]
fn alignment_symmetric_in_leaf_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let mut raw = random_raw(&mut rng, 30);
        let before = vc_alignment(&to_page(&raw)).unwrap();
        let leaves: Vec<usize> = (0..30).filter(|&i| !raw.parents.contains(&Some(i))).collect();
        let mut shuffled: Vec<[u16; 4]> = leaves.iter().map(|&i| raw.boxes[i]).collect();
        shuffled.shuffle(&mut rng);
        for (&i, b) in leaves.iter().zip(shuffled) {
            raw.boxes[i] = b;
        }
        assert_eq!(before, vc_alignment(&to_page(&raw)).unwrap());
    }
}

#[test]
fn color_invariant_under_recoloring() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let raw = random_raw(&mut rng, 40);
    let page = to_page(&raw);
    // A bijection on palette ids: reverse the 46 colors.
    let recolored = map_rps(&page, |v| {
        for p in [RpName::Color, RpName::BackgroundColor] {
            v[p] = RpTokenId(1921 + 1966 - v[p].0);
        }
    });
    assert_eq!(vc_color(&page).unwrap(), vc_color(&recolored).unwrap());
    assert_eq!(vc_size(&page).unwrap(), vc_size(&recolored).unwrap());
}
