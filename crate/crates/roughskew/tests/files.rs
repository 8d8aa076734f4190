use roughskew::tsv::{read_price_grid, read_smile, write_price_grid, write_smile, Provenance, Tsv};
use roughskew::ExperimentConfig;
use roughskew_core::pricer::{price_grid, slice_from_prices};
use roughskew_core::{PricingConfig, RBergomiParams, Sequential};

#[test]
fn simulated_smile_and_prices_survive_a_file_round_trip() {
    let params = RBergomiParams::new(100.0, 0.2, 0.8, 0.2, -0.7).unwrap();
    let cfg = PricingConfig { n_paths: 5_000, n_strikes: 15, ..PricingConfig::default() };
    let sampler = cfg.sampler(&params, 0.1).unwrap();
    let grid = price_grid(&sampler, &cfg, &Sequential).unwrap();
    let smile = slice_from_prices(&grid, params.s0).unwrap().slice;
    let prov = Provenance::of(&ExperimentConfig::default());

    let mut buf = Vec::new();
    write_smile(&mut buf, &prov, &smile).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(read_smile(&text).unwrap(), smile);
    let tsv = Tsv::parse(&text).unwrap();
    assert_eq!(tsv.meta("config"), Some(prov.config_hash.as_str()));
    assert_eq!(tsv.columns, ["k", "iv", "stderr"]);

    let mut buf = Vec::new();
    write_price_grid(&mut buf, &prov, &grid).unwrap();
    let (k, price, se) = read_price_grid(&String::from_utf8(buf).unwrap()).unwrap();
    assert_eq!(k, grid.log_strikes);
    assert_eq!(price, grid.prices.iter().map(|p| p.value).collect::<Vec<_>>());
    assert_eq!(se, grid.prices.iter().map(|p| p.stderr).collect::<Vec<_>>());
}

#[test]
fn malformed_files_are_reported() {
    assert!(read_smile("# t=0 maturity=1 log_spot=0 n_paths=1\nk\tiv\n0\t0.2\n").is_err());
    assert!(read_smile("k\tiv\tstderr\n0\t0.2\t0.1\n").unwrap_err().contains("t"));
    assert!(Tsv::parse("a\tb\n1\n").is_err());
    assert!(Tsv::parse("# only comments\n").is_err());
}
