#include <cstdio>

int main() {
  std::puts("adavae: cli not wired up yet");
  return 0;
}
