use super::*;
use proptest::prelude::*;

fn law_raw(rows: usize, seed: u64) -> RawDataset {
    parse_csv(&synthetic::law_school_csv(rows, seed), &SchemaConfig::law_school()).unwrap()
}

#[test]
fn split_sizes_use_floor() {
    assert_eq!(SplitSpec::new(0.30, 0).sizes(20_798), (14_559, 6_239));
    assert_eq!(SplitSpec::new(0.30, 0).sizes(395), (277, 118));
}

#[test]
fn law_sized_split_counts() {
    let raw = law_raw(20_798, 1);
    let split = encode_and_split(&raw, SplitSpec::new(0.30, 7)).unwrap();
    assert_eq!(split.train.row_count, 14_559);
    assert_eq!(split.test.row_count, 6_239);
}

#[test]
fn student_sized_split_counts() {
    let raw = parse_csv(&synthetic::student_math_csv(395, 3), &SchemaConfig::student_math()).unwrap();
    let split = encode_and_split(&raw, SplitSpec::new(0.30, 7)).unwrap();
    assert_eq!((split.train.row_count, split.test.row_count), (277, 118));
    // 4 categorical + 13 binary feature columns minus none (target is numerical)
    assert_eq!(split.train.n_cat(), 17);
    assert_eq!(split.train.n_num(), 15);
}

#[test]
fn split_is_a_deterministic_partition() {
    let raw = law_raw(500, 2);
    let a = encode_and_split(&raw, SplitSpec::new(0.3, 11)).unwrap();
    let b = encode_and_split(&raw, SplitSpec::new(0.3, 11)).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    assert_eq!(a.test_rows, b.test_rows);
    let mut all: Vec<usize> = a.train_rows.iter().chain(&a.test_rows).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..500).collect::<Vec<_>>());
    let c = encode_and_split(&raw, SplitSpec::new(0.3, 12)).unwrap();
    assert_ne!(a.test_rows, c.test_rows);
}

#[test]
fn standardization_uses_training_rows_only() {
    let raw = law_raw(800, 3);
    let split = encode_and_split(&raw, SplitSpec::new(0.3, 5)).unwrap();
    let train = &split.train;
    for j in 0..train.n_num() {
        let col: Vec<f64> = (0..train.row_count).map(|r| train.num_row(r)[j]).collect();
        let n = col.len() as f64;
        let mu = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mu.abs() < 1e-9, "column {j} mean {mu}");
        assert!((sd - 1.0).abs() < 1e-6, "column {j} std {sd}");
    }
    // Recompute the statistics from the raw training rows and compare.
    let raw_train = raw.select(&split.train_rows);
    for (enc, col) in split.encoder.columns.iter().zip(&raw_train.columns) {
        if let (EncodedColumn::Numerical { mean, std, .. }, RawColumn::Numerical { values, .. }) = (enc, col) {
            let n = values.len() as f64;
            let mu = values.iter().sum::<f64>() / n;
            let sd = (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            assert_eq!(*mean, mu);
            assert_eq!(*std, sd);
        }
    }
}

#[test]
fn unseen_test_category_maps_to_reserved_code() {
    let mut schema = SchemaConfig::law_school();
    schema.columns.retain(|c| ["lsat", "tier", "race", "pass_bar"].contains(&c.name.as_str()));
    let mut csv = String::from("lsat,tier,race,pass_bar\n");
    for i in 0..9 {
        csv.push_str(&format!("{},{},White,1\n", 30 + i, 1 + i % 2));
    }
    csv.push_str("40,9,Non-White,0\n");
    let raw = parse_csv(&csv, &schema).unwrap();
    // Find a seed that puts the lone tier-9 row into the test split.
    let split = (0..200)
        .map(|s| encode_and_split(&raw, SplitSpec::new(0.3, s)).unwrap())
        .find(|sp| sp.test_rows.contains(&9))
        .expect("some seed puts row 9 into test");
    let tier_col =
        split.train.meta.cat_columns.iter().position(|&i| split.train.meta.schema[i].name == "tier").unwrap();
    let card = split.train.meta.cat_cardinalities()[tier_col];
    let r = split.test_rows.iter().position(|&i| i == 9).unwrap();
    assert_eq!(split.test.cat_row(r)[tier_col], card);
    assert_eq!(split.encoder.decode_categories(&split.test)[r][tier_col], None);
}

#[test]
fn sensitive_feature_can_be_excluded() {
    let raw = law_raw(200, 4);
    let split = encode_and_split(&raw, SplitSpec::new(0.3, 1)).unwrap();
    let full = &split.train;
    assert!(full.meta.sensitive_is_feature());
    let reduced = full.exclude_sensitive();
    assert!(!reduced.meta.sensitive_is_feature());
    assert_eq!(reduced.n_cat(), full.n_cat() - 1);
    assert_eq!(reduced.sensitive, full.sensitive);
    reduced.validate().unwrap();
    assert_eq!(reduced.exclude_sensitive(), reduced);
}

#[test]
fn group_stats_examples() {
    let stats = group_stats(&[1, 0, 1], &[1, 1, 1]);
    assert_eq!(stats.unprivileged_fraction, 0.0);
    assert_eq!(stats.base_rate_unprivileged, None);
    assert_eq!(stats.base_rate_privileged, Some(2.0 / 3.0));
    let stats = group_stats(&[1, 0, 1, 1], &[0, 0, 1, 1]);
    assert_eq!(stats.unprivileged_fraction, 0.5);
    assert_eq!(stats.base_rate_unprivileged, Some(0.5));
}

#[test]
fn synthetic_law_matches_published_group_share() {
    let raw = law_raw(20_798, 9);
    let stats = group_stats(&raw.labels, &raw.sensitive);
    assert!((stats.unprivileged_fraction - 0.16).abs() < 0.01);
}

#[test]
fn encoded_csv_round_trip() {
    let raw = law_raw(120, 5);
    let split = encode_and_split(&raw, SplitSpec::new(0.3, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    split.train.write_csv(&path).unwrap();
    let back = Dataset::read_csv(&path, split.train.meta.clone()).unwrap();
    assert_eq!(back, split.train);
}

#[test]
fn empty_split_is_rejected() {
    let raw = law_raw(3, 1);
    assert!(matches!(encode_and_split(&raw, SplitSpec::new(0.3, 0)), Err(DataError::InvalidSplit(_))));
    assert!(matches!(encode_and_split(&raw, SplitSpec::new(1.0, 0)), Err(DataError::InvalidSplit(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn re_encoding_is_idempotent_on_codes(seed in 0u64..1000) {
        let raw = law_raw(60, seed);
        let split = encode_and_split(&raw, SplitSpec::new(0.3, seed)).unwrap();
        // Rebuild a raw dataset whose categories are the decoded strings of
        // the encoded training split, then encode it again.
        let decoded = split.encoder.decode_categories(&split.train);
        let mut again = raw.select(&split.train_rows);
        let mut ci = 0;
        for col in &mut again.columns {
            if let RawColumn::Discrete { vocab, codes, .. } = col {
                let strings: Vec<String> = decoded.iter().map(|row| row[ci].clone().unwrap()).collect();
                let mut v: Vec<String> = Vec::new();
                *codes = strings.iter().map(|s| match v.iter().position(|x| x == s) {
                    Some(i) => i,
                    None => { v.push(s.clone()); v.len() - 1 }
                }).collect();
                *vocab = v;
                ci += 1;
            }
        }
        let re = split.encoder.transform(&again).unwrap();
        prop_assert_eq!(re.categorical_codes, split.train.categorical_codes);
    }
}
