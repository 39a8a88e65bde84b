//! Synthetic corpora shared by the integration suites.
//!
//! Both generators are deterministic and need no RNG: structure comes from
//! index arithmetic, realism from per-user timestamp offsets.

// Each test binary compiles this module separately and none uses all of it.
#![allow(dead_code)]

use hgnn_core::data::{build_sequences, split, Interaction, SplitSets, Vocabulary};

pub const DAY: i64 = 86_400;

/// Builds vocabulary and chronological splits the same way the CLI does.
pub fn index_corpus(interactions: &[Interaction], window: usize) -> (Vocabulary, SplitSets) {
    let vocab = Vocabulary::from_interactions(interactions);
    let per_user = build_sequences(interactions, window).expect("window size is valid");
    let sets = split(&per_user, &vocab).expect("all keys come from the same log");
    (vocab, sets)
}

fn event(user: usize, item: usize, timestamp: i64) -> Interaction {
    Interaction {
        user_id: format!("u{user}"),
        item_id: format!("it{item}"),
        timestamp,
        genres: None,
    }
}

/// Fifty users over a 40-item catalog, ten groups of five users each.
///
/// Group `g` owns items `4g..4g+3`: three members and one target item that
/// appears only in the final position. Each user alternates two of the three
/// members (the third is left out, rotating by user slot) and then hits the
/// group target, one event per day:
///
/// ```text
/// k0 k1 k0 k1 k0 target
/// ```
///
/// With window 5 every user yields exactly one sample, so the whole corpus
/// lands in the train split. The layout pins down three things at once: the
/// left-out member makes a user's twin windows near-identical yet keeps the
/// member a valid negative for the twin (nothing else suppresses in-window
/// scores), repeat padding lifts member frequencies well above target
/// frequencies (a popularity ranker never surfaces targets), and equal group
/// sizes keep cross-group score races symmetric.
pub fn grouped_corpus() -> Vec<Interaction> {
    let mut out = Vec::new();
    for g in 0..10usize {
        for slot in 0..5usize {
            let uid = g * 5 + slot;
            let left_out = slot % 3;
            let members: Vec<usize> = (0..3).filter(|&m| m != left_out).map(|m| 4 * g + m).collect();
            let target = 4 * g + 3;
            let (k0, k1) = (members[0], members[1]);
            let items = [k0, k1, k0, k1, k0, target];
            let base = 1_500_000_000 + uid as i64 * 137;
            for (i, &item) in items.iter().enumerate() {
                out.push(event(uid, item, base + i as i64 * DAY));
            }
        }
    }
    out
}

pub const GROUPED_WINDOW: usize = 5;

/// Fifty users with two temporally separated genre phases.
///
/// Phase one is twelve daily events in the user's first genre, phase two
/// four daily events in the other genre after a sixty-day gap. Even users
/// start in genre alpha (items 0..19), odd users in beta (items 20..39);
/// within a phase the item index walks `(u + i) mod 20`. With window 8 each
/// user yields eight samples (six train, one validation, one test); the
/// test window mixes five stale phase-one nodes with three recent phase-two
/// nodes and a phase-two target.
pub fn two_phase_corpus() -> Vec<Interaction> {
    let mut out = Vec::new();
    for u in 0..50usize {
        let first_alpha = u % 2 == 0;
        let base = 1_600_000_000 + u as i64 * 271;
        for i in 0..16usize {
            let phase_one = i < 12;
            let in_alpha = phase_one == first_alpha;
            let idx = (u + i) % 20;
            let item = if in_alpha { idx } else { 20 + idx };
            let genre = if item < 20 { "alpha" } else { "beta" };
            let gap = if phase_one { 0 } else { 60 * DAY };
            out.push(Interaction {
                user_id: format!("u{u}"),
                item_id: format!("it{item}"),
                timestamp: base + i as i64 * DAY + gap,
                genres: Some([genre.to_string()].into_iter().collect()),
            });
        }
    }
    out
}

pub const TWO_PHASE_WINDOW: usize = 8;

/// Renders interactions in the ingestion CSV format; the genres column
/// appears only when at least one event carries labels.
pub fn to_csv(interactions: &[Interaction]) -> String {
    let with_genres = interactions.iter().any(|it| it.genres.is_some());
    let mut out = String::from(if with_genres {
        "user_id,item_id,timestamp,genres\n"
    } else {
        "user_id,item_id,timestamp\n"
    });
    for it in interactions {
        out.push_str(&format!("{},{},{}", it.user_id, it.item_id, it.timestamp));
        if with_genres {
            out.push(',');
            if let Some(genres) = &it.genres {
                out.push_str(&genres.iter().cloned().collect::<Vec<_>>().join("|"));
            }
        }
        out.push('\n');
    }
    out
}
