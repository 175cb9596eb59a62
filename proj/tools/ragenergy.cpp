#include <atomic>
#include <csignal>
#include <iostream>

#include "ragenergy/cli.hpp"

namespace {
std::atomic<bool> g_stop{false};
extern "C" void on_interrupt(int) { g_stop.store(true); }
}  // namespace

int main(int argc, char** argv) {
  // The runner checks the flag between queries, so the log never holds a
  // partial record.
  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);
  return ragenergy::cli::main(argc, argv, {std::cout, std::cerr}, &g_stop);
}
