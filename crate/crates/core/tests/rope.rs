use proptest::prelude::*;
use rgmp::numerics::DenseTensor;
use rgmp::rope::{apply_rope, apply_rope_backward, build_rope_table};
use std::collections::HashMap;

fn pair_norms(x: &DenseTensor) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let plane = h * w;
    let mut out = Vec::new();
    for s in 0..n {
        for j in 0..c / 2 {
            for p in 0..plane {
                let a = x.data()[(s * c + 2 * j) * plane + p];
                let b = x.data()[(s * c + 2 * j + 1) * plane + p];
                out.push((a * a + b * b).sqrt());
            }
        }
    }
    out
}

fn field(c: usize, h: usize, w: usize, values: &[f64]) -> DenseTensor {
    DenseTensor::from_fn(&[1, c, h, w], |i| values[i / (h * w)])
}

/// Channel vector at position `(y, x)`.
fn at(t: &DenseTensor, y: usize, x: usize) -> Vec<f64> {
    let (_, c, h, w) = t.dims4().unwrap();
    (0..c).map(|ch| t.data()[(ch * h + y) * w + x]).collect()
}

#[test]
fn relative_position_inner_product_on_4x4_grid() {
    let (c, h, w) = (8, 4, 4);
    let table = build_rope_table(h, w, c).unwrap();
    let u = [0.3, -1.2, 0.8, 0.5, -0.7, 2.0, 1.1, -0.4];
    let v = [1.5, 0.2, -0.9, 0.6, 0.4, -1.3, 0.7, 0.9];
    let ru = apply_rope(&field(c, h, w, &u), &table).unwrap();
    let rv = apply_rope(&field(c, h, w, &v), &table).unwrap();
    let mut by_offset: HashMap<isize, f64> = HashMap::new();
    let mut checked = 0;
    for p1 in 0..h * w {
        for p2 in 0..h * w {
            let (h1, w1, h2, w2) = (p1 / w, p1 % w, p2 / w, p2 % w);
            let a = at(&ru, h1, w1);
            let b = at(&rv, h2, w2);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let offset = (h1 + w1) as isize - (h2 + w2) as isize;
            let first = *by_offset.entry(offset).or_insert(dot);
            assert!(
                (dot - first).abs() < 1e-12,
                "offset {offset}: {dot} vs {first}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 256);
    // the product genuinely varies with the offset
    assert!(by_offset.len() == 13 && (by_offset[&0] - by_offset[&3]).abs() > 1e-3);
}

#[test]
fn positions_with_equal_diagonal_share_rotation() {
    let table = build_rope_table(4, 4, 8).unwrap();
    let x = field(8, 4, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let y = apply_rope(&x, &table).unwrap();
    assert_eq!(at(&y, 1, 2), at(&y, 2, 1));
    assert_eq!(at(&y, 0, 3), at(&y, 3, 0));
}

proptest! {
    #[test]
    fn norm_is_preserved(values in prop::collection::vec(-100.0f64..100.0, 2 * 8 * 4 * 4)) {
        let table = build_rope_table(4, 4, 8).unwrap();
        let x = DenseTensor::new(&[2, 8, 4, 4], values).unwrap();
        let y = apply_rope(&x, &table).unwrap();
        for (a, b) in pair_norms(&x).iter().zip(pair_norms(&y)) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn rope_is_linear(
        xs in prop::collection::vec(-10.0f64..10.0, 6 * 3 * 5),
        ys in prop::collection::vec(-10.0f64..10.0, 6 * 3 * 5),
        a in -5.0f64..5.0,
    ) {
        let table = build_rope_table(3, 5, 6).unwrap();
        let x = DenseTensor::new(&[1, 6, 3, 5], xs).unwrap();
        let y = DenseTensor::new(&[1, 6, 3, 5], ys).unwrap();
        let lhs = apply_rope(&x.scale(a).add(&y).unwrap(), &table).unwrap();
        let rhs = apply_rope(&x, &table).unwrap().scale(a).add(&apply_rope(&y, &table).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn backward_is_transpose(
        xs in prop::collection::vec(-1.0f64..1.0, 4 * 3 * 3),
        gs in prop::collection::vec(-1.0f64..1.0, 4 * 3 * 3),
    ) {
        let table = build_rope_table(3, 3, 4).unwrap();
        let x = DenseTensor::new(&[1, 4, 3, 3], xs).unwrap();
        let g = DenseTensor::new(&[1, 4, 3, 3], gs).unwrap();
        let lhs = g.dot(&apply_rope(&x, &table).unwrap()).unwrap();
        let rhs = apply_rope_backward(&g, &table).unwrap().dot(&x).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }
}
