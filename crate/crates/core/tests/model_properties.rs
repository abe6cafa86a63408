//! Structural properties of the assembled construction on small truncations.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use shiftforge_core::construction::allocator::{level_index, level_path};
use shiftforge_core::measure::check_disjoint;
use shiftforge_core::scalar::{dyadic, ratio};
use shiftforge_core::tree::VertexAddress;
use shiftforge_core::verification::{apply_shift, path_sum, FiniteVector};
use shiftforge_core::{assemble, RationalModel};

fn rooted(path: &[u64]) -> VertexAddress {
    VertexAddress::rooted(path).unwrap()
}

#[test]
fn level_sums_are_dyadic() {
    let model: RationalModel = assemble(1, true);
    let ctx = model.anchor_context();
    for k in 0..=2usize {
        let words: Vec<Vec<u64>> = if k == 0 { vec![vec![]] } else { (0..64).map(|i| level_path(k, i)).collect() };
        let mut total = BigRational::zero();
        for (i, x) in words.iter().enumerate() {
            if k > 0 {
                assert_eq!(level_index(x), i as u128);
            }
            // Σ_i 1/(i(i+1)) = 1, so the top-degree integral of ν_x is its scale
            let gap = ctx.nu_component(x);
            assert_eq!(gap.finite_degree(), (k + 1) as u32);
            let s = gap.partial_sum(gap.finite_degree() as i32, 1 << 20);
            assert!(s < *gap.scale() && gap.scale() - &s < dyadic(19));
            total += gap.scale();
        }
        let bound = dyadic(k as u64);
        assert!(total <= bound);
        let want = if k == 0 { ratio(1, 2) } else { &bound * (BigRational::one() - dyadic(64)) };
        assert_eq!(total, want, "level {k}");
    }
}

#[test]
fn nu_moment_is_at_most_two() {
    for n in 1..=2 {
        let model: RationalModel = assemble(n, true);
        let v = model.nu_moment(n as i32).unwrap();
        assert!(v.finite().unwrap().hi() <= &ratio(2, 1), "n={n}");
    }
}

#[test]
fn first_level_partitions_nu_atoms() {
    let model: RationalModel = assemble(1, true);
    let ctx = model.anchor_context();
    let atoms = ctx.nu().atoms(400).unwrap();
    check_disjoint(&atoms).unwrap();
    for a in &atoms {
        let (y, i) = ctx.owner_of(&a.support).expect("every ν atom decodes");
        let owners: Vec<u64> = (1..=600).filter(|&j| ctx.omega_contains(&y, i, &[j])).collect();
        assert_eq!(owners.len(), 1, "atom {i} of {y:?}");
        let j = owners[0];
        // prefix consistency one level down
        let deeper: Vec<u64> = (1..=600).filter(|&b| ctx.omega_contains(&y, i, &[j, b])).collect();
        assert!(deeper.len() <= 1);
        for other in (1..=20).filter(|&o| o != j) {
            for b in 1..=5 {
                assert!(!ctx.omega_contains(&y, i, &[other, b]));
            }
        }
    }
}

#[test]
fn tilted_moments_match_omega_ratios() {
    let model: RationalModel = assemble(1, true);
    let ctx = model.anchor_context();
    let effort = model.effort();
    for x in [vec![], vec![1u64], vec![2]] {
        let k = x.len() as i32;
        let den = ctx.integral(&x, k, effort).unwrap();
        let mu = model.mu(&rooted(&x)).unwrap();
        for d in -1..=1 {
            let num = ctx.integral(&x, k + d, effort).unwrap();
            let m = mu.moment_with(d, model.budget()).unwrap();
            assert!(m.finite().unwrap().overlaps(&(&num / &den)), "x={x:?} d={d}");
        }
    }
}

#[test]
fn moment_profile_on_sampled_vertices() {
    let model: RationalModel = assemble(1, true);
    for v in [rooted(&[]), rooted(&[1]), rooted(&[3]), rooted(&[2, 1])] {
        let mu = model.mu(&v).unwrap();
        assert!(mu.moment_with(1, model.budget()).unwrap().is_finite(), "{v}");
        assert!(mu.moment_with(2, model.budget()).unwrap().is_divergent(), "{v}");
    }
}

#[test]
fn iterated_shift_norm_equals_path_sum() {
    // path sums are finite up to degree n
    let model: RationalModel = assemble(2, true);
    let u = rooted(&[]);
    let mut f = FiniteVector::basis(u.clone());
    for k in 1..=2u32 {
        f = apply_shift(&model, &f, 3).unwrap();
        let p = path_sum(&model, &u, k, 3).unwrap();
        assert_eq!(&f.norm_sq(), p.finite().unwrap(), "k={k}");
    }
}

#[test]
fn mass_lookup_never_sees_overlaps() {
    let model: RationalModel = assemble(1, true);
    let root = model.mu(&rooted(&[])).unwrap();
    for a in root.atoms(64).unwrap() {
        let mass = root.mass_at(&a.support, 64).unwrap();
        assert_eq!(mass, a.mass);
        let child = model.owning_child(&rooted(&[]), &a.support).unwrap().unwrap();
        assert!(model.mu(&child).unwrap().mass_at(&a.support, 256).unwrap().is_positive());
    }
    let outside = BigRational::from_integer(BigInt::from(7)) / BigRational::from_integer(BigInt::from(3));
    assert!(root.mass_at(&outside, 64).unwrap().contains_zero());
}
