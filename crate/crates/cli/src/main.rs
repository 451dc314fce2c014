fn main() {
    std::process::exit(outlierseq_cli::main_with(std::env::args_os()));
}
