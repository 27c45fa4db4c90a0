#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>

#include <catch2/catch_amalgamated.hpp>

#include <chexkit/error.hpp>

namespace testsupport {

// Scratch directory under the system temp root, removed on scope exit.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("chexkit-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

// Runs f, which must throw chexkit::Error, and hands back the code.
inline chexkit::errc error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const chexkit::Error& e) {
    return e.code();
  } catch (const std::exception& e) {
    FAIL("expected a chexkit::Error, got: " << e.what());
  }
  FAIL("expected an exception, none was thrown");
  return chexkit::errc::bad_value;
}

// Message text of the thrown Error, for asserting on context details.
inline std::string error_message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const chexkit::Error& e) {
    return e.what();
  }
  FAIL("expected an exception, none was thrown");
  return {};
}

}  // namespace testsupport
