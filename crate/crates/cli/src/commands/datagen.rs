use nanode::train_tasks::train_test_split;

use crate::io::{load_config, output_dir, write_text};
use crate::{CliResult, Common};

pub fn run(common: &Common) -> CliResult<String> {
    let cfg = load_config(common)?;
    let dir = output_dir(common, &cfg)?;
    let t = &cfg.task;
    let (train, test) = train_test_split(t.name, cfg.train.seed, t.n_train as usize, t.n_test as usize, t.noise)?;
    let a = write_text(&dir, "train.csv", &train.to_csv())?;
    let b = write_text(&dir, "test.csv", &test.to_csv())?;
    Ok(format!("wrote {} and {}\n", a.display(), b.display()))
}
