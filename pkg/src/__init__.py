# TrustSAS - privacy-preserving spectrum access simulation
