use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;

use freqbin::detection::{Channel, CoincidenceTable};
use freqbin::fixtures::{
    emit_coincidence, emit_table1, emit_table2, format_phase, parse_coincidence, parse_fixture, parse_phase,
    parse_table1, parse_table2, Fixture, Schema,
};
use freqbin::output::{format_matrix, parse_matrix, read_matrix, Sweep};
use freqbin::Error;

fn fixture_text(name: &str) -> String {
    fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

#[test]
fn table1_round_trips() {
    let t = parse_table1(&fixture_text("table1.csv"), "table1").unwrap();
    assert_eq!(t.rows.len(), 16);
    assert_eq!(t.normalization(), 328.0);
    let again = parse_table1(&emit_table1(&t), "emitted").unwrap();
    assert_eq!(again, t);
}

#[test]
fn table2_round_trips() {
    let t = parse_table2(&fixture_text("table2.csv"), "table2").unwrap();
    let emitted = emit_table2(&t);
    assert_eq!(parse_table2(&emitted, "emitted").unwrap(), t);
    // emitting the re-parsed table is a fixed point
    assert_eq!(emit_table2(&parse_table2(&emitted, "emitted").unwrap()), emitted);
    let counts = t.to_counts().unwrap();
    assert_eq!(counts.n_max.counts, 160.0);
}

#[test]
fn schema_dispatch() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/table2.csv");
    let schema: Schema = "table2".parse().unwrap();
    assert!(matches!(parse_fixture(&path, schema).unwrap(), Fixture::Table2(_)));
    let wrong: Schema = "table1".parse().unwrap();
    assert!(matches!(parse_fixture(&path, wrong), Err(Error::Parse { .. })));
}

#[test]
fn table1_cell_errors_carry_position() {
    let text = fixture_text("table1.csv").replacen("36,40,36,41", "36,forty,36,41", 1);
    match parse_table1(&text, "t") {
        Err(Error::Parse { line, column, .. }) => {
            assert_eq!(column, 5);
            assert_eq!(text.lines().nth(line - 1).unwrap().trim(), "1,1,1,36,forty,36,41");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn table1_rejects_a_dash_in_a_used_cell() {
    let text = fixture_text("table1.csv").replacen("36,40,36,41", "36,-,36,41", 1);
    assert!(matches!(parse_table1(&text, "t"), Err(Error::Parse { .. })));
}

#[test]
fn reference_matrix_round_trips() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference_rho.txt");
    let m = read_matrix(&path).unwrap();
    assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
    assert!((m.trace().re - 1.0).abs() < 1e-3);
}

#[test]
fn sweep_csv_round_trips() {
    let mut s = Sweep::new(&["x", "y"]);
    s.push(vec![0.1, -2.5e-17]).unwrap();
    s.push(vec![f64::MAX, 3.0]).unwrap();
    assert_eq!(Sweep::from_csv(&s.to_csv()).unwrap(), s);
}

proptest! {
    #[test]
    fn phase_fractions_round_trip(k in -24i32..=24, d in prop::sample::select(vec![1u32, 2, 3, 4, 6, 12])) {
        let v = f64::from(k) * PI / f64::from(d);
        prop_assert_eq!(parse_phase(&format_phase(v)).unwrap(), v);
    }

    #[test]
    fn decimal_phases_round_trip(v in -10.0f64..10.0) {
        prop_assert_eq!(parse_phase(&format_phase(v)).unwrap(), v);
    }

    #[test]
    fn coincidence_tables_round_trip(
        t in 0.001f64..1e4,
        rows in prop::collection::vec((-200i64..200, -200i64..200, 0u32..100_000, 0.0f64..50.0), 0..20),
    ) {
        let mut table = CoincidenceTable::new(t);
        for (s, i, n, a) in rows {
            table.push(Channel::Bin(s), Channel::Bin(i), f64::from(n), a).unwrap();
        }
        let text = emit_coincidence(&table);
        prop_assert_eq!(parse_coincidence(&text, "p").unwrap(), table);
    }
}
