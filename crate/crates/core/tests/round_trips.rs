use proptest::prelude::*;
use windgrid::ingest::{load_series, write_series, TelemetrySeries, TurbineRegistry, Variable};
use windgrid::scene::{build_samples, read_stf, write_stf, SampleConfig};
use windgrid::synth;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn series_csv_round_trip(
        rows in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.9, -1e6f64..1e6), 6), 1..5),
        start in -1_000_000i64..1_000_000,
        period in 1i64..3600,
    ) {
        let n = rows.len();
        // The lattice is recovered from the data, so keep both ends present.
        let rows: Vec<Vec<Option<f64>>> = rows
            .into_iter()
            .map(|mut r| {
                r[0].get_or_insert(0.5);
                r[5].get_or_insert(-0.5);
                r
            })
            .collect();
        let reg = TurbineRegistry::from_rows((0..n).map(|i| (10 * i as i64 + 3, 40.0 + i as f64, -100.0))).unwrap();
        let s = TelemetrySeries::new(Variable::Speed, start, period, rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_series(&p, &s, &reg).unwrap();
        let back = load_series(&p, &reg, Variable::Speed).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn stf_round_trip_keeps_f32_values() {
    let mut cfg = synth::reference_config();
    cfg.field.height = 5;
    cfg.field.width = 6;
    cfg.field.steps = 40;
    let sc = synth::synthesize(&cfg).unwrap();
    let sample_cfg = SampleConfig {
        window: 3,
        horizon: 2,
        variables: vec![Variable::Power, Variable::Speed],
        ..Default::default()
    };
    let set = build_samples(&sc.grid, &[sc.power, sc.speed], &sample_cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.stf");
    write_stf(&p, &set).unwrap();
    let back = read_stf(&p).unwrap();
    assert_eq!(back.plan, set.plan);
    assert_eq!(back.cells, set.cells);
    assert_eq!(back.variables, set.variables);
    for (a, b) in back.samples.iter().zip(&set.samples) {
        assert_eq!(a.input.channel_spec, b.input.channel_spec);
        for (x, y) in a.input.data.iter().zip(&b.input.data) {
            assert_eq!(*x, f64::from(*y as f32));
        }
    }
}
