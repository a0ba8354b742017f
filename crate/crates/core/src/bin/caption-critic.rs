fn main() {
    std::process::exit(caption_critic::cli::dispatch(std::env::args_os()));
}
