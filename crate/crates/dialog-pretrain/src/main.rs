fn main() {
    std::process::exit(dialog_pretrain::harness::cli::run(std::env::args()));
}
