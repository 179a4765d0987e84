#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ultra {

// Exact rational scalar used on all exact code paths. Floating point appears
// only at the exp/Fourier boundary and in fit/oracle code.
using Rat = mpq_class;
using Int = mpz_class;

// Error taxonomy, mapped to CLI exit codes: schema -> 2, cap -> 3,
// assertion/unsupported -> 1.
enum class Errc { schema, cap, assertion, unsupported };

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail_schema(const std::string& msg) { throw Error(Errc::schema, msg); }
[[noreturn]] inline void fail_cap(const std::string& msg) { throw Error(Errc::cap, msg); }
[[noreturn]] inline void fail_assert(const std::string& msg) { throw Error(Errc::assertion, msg); }
[[noreturn]] inline void fail_unsupported(const std::string& msg) {
  throw Error(Errc::unsupported, msg);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail_assert(msg);
}

// Default ceiling for materialized enumerations (level sets, quotient orders,
// dense matrices). Requests whose element count exceeds this are rejected with
// Errc::cap, naming the offending product.
inline constexpr std::uint64_t kEnumerationCap = 1'000'000;

inline Rat rat_pow(const Rat& base, long e) {
  if (e == 0) return Rat(1);
  Rat b = base;
  long n = e;
  if (n < 0) {
    if (b == 0) fail_schema("rat_pow: zero base with negative exponent");
    b = Rat(1) / b;
    n = -n;
  }
  Rat out(1);
  while (n > 0) {
    if (n & 1) out *= b;
    b *= b;
    n >>= 1;
  }
  out.canonicalize();
  return out;
}

inline double to_double(const Rat& r) { return r.get_d(); }
inline double to_double(double x) { return x; }

inline Rat abs_val(const Rat& r) { return r < 0 ? Rat(-r) : r; }
inline double abs_val(double x) { return x < 0 ? -x : x; }

// Canonical rational rendering used in CSV output: "1/3", or just "4" when
// the denominator is 1.
inline std::string rat_str(const Rat& r) {
  Rat c = r;
  c.canonicalize();
  return c.get_str();
}

// floor(t * s) as an exact integer; used for convolution power counts.
inline Int floor_product(const Rat& t, const Rat& s) {
  Rat prod = t * s;
  prod.canonicalize();
  Int q, r;
  mpz_fdiv_qr(q.get_mpz_t(), r.get_mpz_t(), prod.get_num().get_mpz_t(),
              prod.get_den().get_mpz_t());
  return q;
}

inline Rat parse_rat(const std::string& text) {
  try {
    Rat r;
    if (text.find('.') != std::string::npos || text.find('e') != std::string::npos ||
        text.find('E') != std::string::npos) {
      // Decimal literal: parse via long double into an exact rational.
      size_t pos = 0;
      double v = std::stod(text, &pos);
      if (pos != text.size()) fail_schema("not a number: '" + text + "'");
      r = Rat(v);
    } else {
      if (r.set_str(text, 10) != 0) fail_schema("not a rational: '" + text + "'");
    }
    r.canonicalize();
    return r;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail_schema("not a rational: '" + text + "'");
  }
}

}  // namespace ultra
