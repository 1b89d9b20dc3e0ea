use eerl::text::{parse_schema, render_schema, structure_hash};
use proptest::prelude::*;

/// Schema text with `d` entities and relations given by member indices plus
/// an optional position whose entity is marked `one`.
fn schema_text(counts: &[usize], relations: &[(Vec<usize>, Option<usize>)]) -> String {
    let mut text = String::from("# generated\n");
    for (k, n) in counts.iter().enumerate() {
        text += &format!("entity e{k} {n}\n");
    }
    for (r, (members, one)) in relations.iter().enumerate() {
        let names: Vec<String> = members.iter().map(|m| format!("e{}", m % counts.len())).collect();
        text += &format!("relation r{r} {}", names.join(" "));
        if let Some(pos) = one {
            text += &format!(" one {}", names[pos % names.len()]);
        }
        text.push('\n');
    }
    text
}

fn arb_schema() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(1usize..10, 1..5),
        prop::collection::vec((prop::collection::vec(0usize..5, 1..5), prop::option::of(0usize..5)), 1..5),
    )
        .prop_map(|(counts, relations)| schema_text(&counts, &relations))
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(text in arb_schema()) {
        let schema = parse_schema(&text).unwrap();
        let rendered = render_schema(&schema);
        let again = parse_schema(&rendered).unwrap();
        prop_assert_eq!(&again, &schema);
        prop_assert_eq!(render_schema(&again), rendered);
    }

    #[test]
    fn hash_ignores_counts_only(text in arb_schema(), bump in 1usize..5) {
        let schema = parse_schema(&text).unwrap();
        let resized = text.lines().map(|l| match l.strip_prefix("entity ") {
            Some(rest) => {
                let (name, n) = rest.split_once(' ').unwrap();
                format!("entity {name} {}", n.parse::<usize>().unwrap() + bump)
            }
            None => l.to_string(),
        }).collect::<Vec<_>>().join("\n");
        let other = parse_schema(&resized).unwrap();
        prop_assert_ne!(&other, &schema);
        prop_assert_eq!(structure_hash(&other), structure_hash(&schema));
    }
}
