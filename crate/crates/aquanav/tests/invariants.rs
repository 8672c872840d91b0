//! Randomized invariants: serialization round-trips, interval algebra, and
//! containment properties of the evolutionary operators.

use aquanav::evo::crossover;
use aquanav::interval::{Interval, IntervalBox};
use aquanav::nn::{Activation, Genome, Layer, Network};
use proptest::prelude::*;

fn small_net() -> impl Strategy<Value = Network> {
    (2usize..5, 2usize..6, 2usize..4).prop_flat_map(|(din, hidden, dout)| {
        (
            proptest::collection::vec(-2.0..2.0f64, hidden * din + hidden),
            proptest::collection::vec(-2.0..2.0f64, dout * hidden + dout),
        )
            .prop_map(move |(p1, p2)| {
                let (w1, b1) = p1.split_at(hidden * din);
                let (w2, b2) = p2.split_at(dout * hidden);
                Network::new(
                    din,
                    vec![
                        Layer::new(
                            w1.chunks(din).map(<[f64]>::to_vec).collect(),
                            b1.to_vec(),
                            Activation::Relu,
                        )
                        .unwrap(),
                        Layer::new(
                            w2.chunks(hidden).map(<[f64]>::to_vec).collect(),
                            b2.to_vec(),
                            Activation::Linear,
                        )
                        .unwrap(),
                    ],
                )
                .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn network_text_round_trip(net in small_net()) {
        let back = Network::from_text(&net.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), net.to_text());
        prop_assert_eq!(back.hash(), net.hash());
    }

    #[test]
    fn flatten_unflatten_is_identity(net in small_net()) {
        let back = Network::unflatten(&net.arch(), &net.flatten()).unwrap();
        prop_assert_eq!(back.to_text(), net.to_text());
    }

    #[test]
    fn bisect_partitions_the_box(
        lo in proptest::collection::vec(-3.0..3.0f64, 1..6),
        w in proptest::collection::vec(0.01..2.0f64, 6),
    ) {
        let dims: Vec<Interval> = lo
            .iter()
            .zip(&w)
            .map(|(&l, &w)| Interval::new(l, l + w).unwrap())
            .collect();
        let bx = IntervalBox::new(dims);
        let widths = vec![1.0; bx.dim()];
        let kids = bx.bisect(&widths);
        prop_assert_eq!(kids.len(), 2);
        let vol: f64 = kids.iter().map(IntervalBox::volume).sum();
        prop_assert!((vol - bx.volume()).abs() <= 1e-9 * bx.volume());
        for kid in &kids {
            for (k, p) in kid.dims.iter().zip(&bx.dims) {
                prop_assert!(k.is_subset_of(p));
            }
        }
    }

    #[test]
    fn intersection_is_contained_in_both(
        a in (-2.0..2.0f64, 0.01..2.0f64),
        b in (-2.0..2.0f64, 0.01..2.0f64),
    ) {
        let ia = Interval::new(a.0, a.0 + a.1).unwrap();
        let ib = Interval::new(b.0, b.0 + b.1).unwrap();
        let both = ia.intersect(&ib);
        if both.lo <= both.hi {
            prop_assert!(both.is_subset_of(&ia));
            prop_assert!(both.is_subset_of(&ib));
        }
    }

    #[test]
    fn crossover_stays_between_the_parents(
        pairs in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..50),
        tau in 0.0..1.0f64,
    ) {
        let (l, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let child = crossover(&Genome(l.clone()), &Genome(w.clone()), tau).unwrap();
        for ((c, l), w) in child.0.iter().zip(&l).zip(&w) {
            prop_assert!(*c >= l.min(*w) - 1e-12 && *c <= l.max(*w) + 1e-12);
        }
    }
}
