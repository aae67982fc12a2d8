//! Parse a raw ratings file, drop infrequent users, and produce the
//! chronological train/validation/test split used by every experiment.
//!
//! ```text
//! cargo run --example ingest_and_split
//! ```

use mrfrec::data::{chronological_split, filter_infrequent, parse_ratings, RatingsFormat};

fn main() {
    // The classic `user::item::rating::timestamp` layout. Five users, but one
    // of them only rated twice and will be dropped by the frequency filter.
    let raw = "\
# toy export
1::10::5::100\n1::11::3::200\n1::12::4::300\n1::13::2::400\n1::14::5::500\n\
2::10::4::110\n2::11::2::210\n2::12::5::310\n2::13::1::410\n2::14::4::510\n\
3::10::3::120\n3::11::3::220\n3::12::4::320\n3::13::3::420\n3::14::2::520\n\
4::10::5::130\n4::11::4::230\n4::12::5::330\n4::13::4::430\n4::14::5::530\n\
5::10::1::140\n5::11::2::240\n";

    let format = RatingsFormat { separator: "::".to_string(), k: 5 };
    let data = parse_ratings(raw.as_bytes(), &format).expect("well-formed ratings");
    println!("parsed ratings:\n{}", data.stats().to_tsv());

    let kept = filter_infrequent(&data, 5);
    println!("after dropping users with fewer than 5 ratings:\n{}", kept.stats().to_tsv());

    // Hold out each user's last rating for test and the one before for
    // validation; everything earlier trains the model. The split is
    // chronological per user, so training never peeks into the future.
    let split = chronological_split(&kept, 1, 1).expect("enough ratings per user");
    println!(
        "split sizes: train={} validation={} test={}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    for t in split.test.triples() {
        println!("test cell: user {} item {} rating {} at t={}", t.user, t.item, t.rating, t.timestamp);
    }
}
