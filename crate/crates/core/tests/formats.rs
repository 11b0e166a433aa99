use std::path::Path;

use spectral_decoupling::experiment::{emit_report, CsvTable, ExperimentConfig, Report};
use spectral_decoupling::rng;
use spectral_decoupling::specnet::{checkpoint, train, Model, SdConfig, Split, TrainConfig};
use spectral_decoupling::stain::StainReference;
use spectral_decoupling::synthgen::{load_manifest, make_he_dataset, make_linear_starvation_dataset, HeImageSpec};
use spectral_decoupling::tiler::{plan_grid, save_tiles, BackgroundFilter};

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
            seen += 1;
        }
    }
    assert!(seen >= 7);
}

#[test]
fn checkpoint_and_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = make_linear_starvation_dataset(40, 1.0, 0.5, 0.1, 0.9, 0).unwrap();
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let (model, trace) = train(Model::mlp(2, 3, 0).unwrap(), &tr, &cfg, &SdConfig::eq1(0.01)).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    checkpoint::save(&model, &ckpt).unwrap();
    assert_eq!(checkpoint::load(&ckpt).unwrap(), model);
    let mut text = std::fs::read_to_string(&ckpt).unwrap();
    text.push_str("garbage\n");
    assert!(checkpoint::from_str(&text).is_err());

    let trace_path = dir.path().join("trace.csv");
    trace.save_csv(&trace_path).unwrap();
    let table = CsvTable::read(&trace_path).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.header[0], "epoch");
}

#[test]
fn stain_reference_text_has_eleven_numbers() {
    let spec = HeImageSpec::default();
    let imgs: Vec<_> = (0..2).map(|i| spec.render(i, &mut rng::stream(9, i as u64))).collect();
    let r = StainReference::from_images(&imgs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ref.txt");
    r.save(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.split_whitespace().count(), 11);
    assert_eq!(StainReference::load(&p).unwrap(), r);
}

#[test]
fn synthetic_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = HeImageSpec { size: 16, ..HeImageSpec::default() };
    let train_set = make_he_dataset(&spec, 6, Split::Train, 1).unwrap();
    let test_set = make_he_dataset(&spec, 4, Split::Test, 1).unwrap();
    spectral_decoupling::synthgen::export_splits(dir.path(), &[(&train_set, None), (&test_set, None)]).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert!(manifest.starts_with("path,label,has_cutouts,split\n"));
    assert_eq!(manifest.lines().count(), 11);
    let back = load_manifest(dir.path().join("manifest.csv"), Some(Split::Test)).unwrap();
    assert_eq!(back.labels(), test_set.labels());
    // PNG storage is 8-bit
    let quantized: Vec<u8> = test_set.images().unwrap().iter().flat_map(|i| i.to_u8()).collect();
    let reloaded: Vec<u8> = back.images().unwrap().iter().flat_map(|i| i.to_u8()).collect();
    assert_eq!(quantized, reloaded);
}

#[test]
fn tile_manifest_matches_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = spectral_decoupling::Image::from_fn(64, 40, 3, |x, y, c| if (x + y) % 7 < 3 { [0.9, 0.2, 0.5][c] } else { 1.0 });
    let grid = plan_grid(64, 40, 32, 0.2).unwrap();
    let records = save_tiles(&img, &grid, &BackgroundFilter::default(), dir.path()).unwrap();
    let table = CsvTable::read(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(table.header, ["x", "y", "tissue_fraction", "kept", "path"]);
    assert_eq!(table.rows.len(), records.len());
    for row in &table.rows {
        assert_eq!(row[3] == "true", dir.path().join(&row[4]).is_file() && !row[4].is_empty());
    }
}

#[test]
fn report_csvs_back_their_charts() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = CsvTable::new("series", &["x", "y", "arm"]);
    for i in 0..4 {
        t.push(vec![i.to_string(), (i * i).to_string(), "a".into()]);
    }
    let chart = spectral_decoupling::experiment::Chart::line("series", "y over x", &t, "x", "y", "arm").unwrap();
    let report = Report { tables: vec![t.clone()], charts: vec![chart], summary: "done\n".into() };
    let files = emit_report(&report, dir.path()).unwrap();
    assert!(files.iter().any(|f| f.ends_with("series.csv")));
    assert!(files.iter().any(|f| f.ends_with("series.svg")));
    assert_eq!(CsvTable::read(dir.path().join("series.csv")).unwrap().rows, t.rows);
}
