#ifndef FEDLITE_TLS_H_
#define FEDLITE_TLS_H_

#include <string>

namespace fedlite::tls {

// Writes a fresh P-256 private key and a self-signed certificate for
// `common_name` (PEM). Throws IoFailure when either file cannot be written.
void generate_self_signed(const std::string& common_name,
                          const std::string& key_path,
                          const std::string& cert_path, int valid_days = 30);

// Whole file as a string; throws IoFailure.
std::string read_file(const std::string& path);

// Parses `pem` as an X.509 certificate; false when it is not one.
bool is_certificate(const std::string& pem);

}  // namespace fedlite::tls

#endif  // FEDLITE_TLS_H_
