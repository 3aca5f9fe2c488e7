use clap::Parser;

fn main() {
    // FUNCTEST_THREADS caps the worker count; results are identical for any
    // value >= 1, so this only trades wall-clock time.
    if let Ok(value) = std::env::var("FUNCTEST_THREADS") {
        match value.parse::<usize>() {
            Ok(threads) if threads >= 1 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global()
                    .expect("thread pool is configured before first use");
            }
            _ => {
                eprintln!("functest: FUNCTEST_THREADS must be a positive integer, got `{value}`");
                std::process::exit(2);
            }
        }
    }
    let cli = functest::cli::Cli::parse();
    std::process::exit(functest::cli::run(cli));
}
