use unkgcp::dataset::{split, SplitRatios};
use unkgcp::testbed::{generate_planted, PlantedConfig};
use unkgcp::unkge::{train, OptimizerKind, ScoreMapping, TrainConfig, TrainObjective};

#[test]
#[ignore]
fn dump_curve() {
    let cfg = PlantedConfig {
        n_entities: 40,
        n_relations: 3,
        dim: 4,
        n_triples: 2000,
        noise_sigma: 0.02,
        heteroscedastic: false,
        seed: 3,
    };
    let (world, triples) = generate_planted(&cfg);
    let mean_c = triples.iter().map(|t| t.confidence()).sum::<f64>() / triples.len() as f64;
    println!("mean c = {mean_c}");
    let data = split(&triples, world.vocab(), SplitRatios::standard(), 3).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 0.02,
        dim: 4,
        batch_size: 64,
        neg_per_pos: 1,
        patience: 25,
        max_epochs: 150,
        optimizer: OptimizerKind::adam(),
        seed: 3,
        neg_weight: 0.001,
        mapping: ScoreMapping::Logistic,
        semi: None,
    };
    let outcome = train(&data, &tcfg, TrainObjective::Mse).unwrap();
    for s in outcome.curve.iter().step_by(5) {
        println!(
            "epoch {:3}  train {:10.4}  val {:8.5}",
            s.epoch, s.train_loss, s.val_criterion
        );
    }
    println!("best epoch {}", outcome.best_epoch);
    let mse = data
        .test
        .iter()
        .map(|t| {
            let (h, r, tt) = t.query();
            (outcome.params.predict(h, r, tt) - t.confidence()).powi(2)
        })
        .sum::<f64>()
        / data.test.len() as f64;
    println!("test mse {mse}");
    let w = outcome.params.w;
    let b = outcome.params.b;
    println!("learned w {w} b {b}  true w {} b {}", world.true_params.w, world.true_params.b);
}
