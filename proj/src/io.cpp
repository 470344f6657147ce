#include "orthotrace/io.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <thread>

#include <openssl/evp.h>

#include "byte_io.hpp"
#include "orthotrace/error.hpp"

namespace orthotrace {

namespace fs = std::filesystem;

namespace {

std::mutex g_hook_mutex;
AtomicWriteHook g_hook;
std::atomic<unsigned long long> g_temp_counter{0};

}  // namespace

std::vector<uint8_t> read_binary_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void set_atomic_write_hook(AtomicWriteHook hook)
{
    std::lock_guard lock(g_hook_mutex);
    g_hook = std::move(hook);
}

void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes)
{
    const fs::path target(path);
    const fs::path dir = target.has_parent_path() ? target.parent_path() : fs::path(".");
    const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
    const fs::path temp = dir / ("." + target.filename().string() + ".tmp" + std::to_string(tid % 100000) + "_"
                                 + std::to_string(g_temp_counter++));
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot write " + temp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(temp, ec);
            throw Error("failed writing " + temp.string());
        }
    }
    AtomicWriteHook hook;
    {
        std::lock_guard lock(g_hook_mutex);
        hook = g_hook;
    }
    try {
        if (hook)
            hook(path, temp.string());
        fs::rename(temp, target);
    } catch (...) {
        std::error_code ec;
        fs::remove(temp, ec);
        throw;
    }
}

void write_text_file(const std::string& path, std::string_view text)
{
    write_file_atomic(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::string sha256_hex(std::span<const uint8_t> bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string sha256_file(const std::string& path)
{
    return sha256_hex(read_binary_file(path));
}

namespace detail {

std::vector<uint8_t> read_file_bytes(const std::string& path)
{
    return read_binary_file(path);
}

void write_file_bytes(const std::string& path, std::span<const uint8_t> bytes)
{
    write_file_atomic(path, bytes);
}

}  // namespace detail

}  // namespace orthotrace
