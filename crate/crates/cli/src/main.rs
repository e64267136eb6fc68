use clap::Parser;

fn main() {
    if let Some(n) = std::env::var("NANODE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = nanode_cli::Cli::parse();
    std::process::exit(nanode_cli::run(cli));
}
