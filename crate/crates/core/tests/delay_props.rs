use ordq::delay::{apply_delay, frame_layout, remove_delay, visible, Slot};
use ordq::{DelayedGrid, SpecialIds, TokenGrid};
use proptest::prelude::*;

fn token_grid() -> impl Strategy<Value = (TokenGrid, usize)> {
    (0usize..40, 1usize..9, 1u32..20_000, 0usize..5).prop_flat_map(|(t, m, v, d)| {
        prop::collection::vec(0..v, t * m).prop_map(move |ids| (TokenGrid::new(t, m, v, ids).unwrap(), d))
    })
}

proptest! {
    #[test]
    fn round_trip_and_layout((g, d) in token_grid()) {
        let dg = apply_delay(&g, d);
        let (t, m) = (g.frames(), g.streams());
        prop_assert_eq!(dg.frames(), t + d * (m - 1));
        prop_assert_eq!(dg.content_frames(), t);
        let pad = dg.specials().pad;
        for f in 0..dg.frames() {
            for j in 0..m {
                let real = d * j <= f && f < d * j + t;
                prop_assert_eq!(dg.is_token_slot(f, j), real);
                if real {
                    prop_assert_eq!(dg.get(f, j), g.get(f - d * j, j));
                } else {
                    prop_assert_eq!(dg.get(f, j), pad);
                }
            }
        }
        prop_assert_eq!(remove_delay(&dg), g);
    }

    #[test]
    fn layout_slots_match_tokens((g, d) in token_grid()) {
        let dg = apply_delay(&g, d);
        let layout = frame_layout(&dg, true);
        prop_assert_eq!(layout.frames, dg.frames() + 2);
        for f in 0..dg.frames() {
            for j in 0..g.streams() {
                match layout.slot(f + 1, j) {
                    Slot::Token { t, j: s } => {
                        prop_assert_eq!(s, j);
                        prop_assert_eq!(dg.get(f, j), g.get(t, j));
                    }
                    Slot::Pad => prop_assert_eq!(dg.get(f, j), dg.specials().pad),
                    other => prop_assert!(false, "unexpected {:?}", other),
                }
            }
        }
    }

    /// Visibility equals "tokens in strictly earlier delayed frames".
    #[test]
    fn visibility_matches_delayed_order(t in 1usize..30, s in 1usize..30, j in 1usize..7, k in 1usize..7, d in 0usize..5) {
        let m = 6;
        let target = t + d * (j - 1);
        let source = s + d * (k - 1);
        prop_assert_eq!(s <= visible(t, j, k, d, m), source < target);
    }
}

#[test]
fn hand_built_grid_with_token_in_pad_slot_is_rejected() {
    let sp = SpecialIds::for_vocab(4).unwrap();
    // m = 2, d = 1, T = 1: [[a, P], [P, b]]
    assert!(DelayedGrid::from_parts(2, 2, 4, 1, sp, vec![1, sp.pad, sp.pad, 2]).is_ok());
    assert!(DelayedGrid::from_parts(2, 2, 4, 1, sp, vec![1, 3, sp.pad, 2]).is_err());
    assert!(DelayedGrid::from_parts(2, 2, 4, 1, sp, vec![sp.pad, sp.pad, sp.pad, 2]).is_err());
    assert!(DelayedGrid::from_parts(2, 2, 4, 1, sp, vec![1, sp.pad, sp.eos, 2]).is_err());
}
