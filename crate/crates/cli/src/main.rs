fn main() {
    std::process::exit(gaze_cli::run(std::env::args_os()));
}
