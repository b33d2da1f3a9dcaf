pub fn main() {
    println!("not wired yet");
}
