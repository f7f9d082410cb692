fn main() {
    std::process::exit(taskprio::cli::run_command(std::env::args_os()));
}
