#include <math.h>
#include <stdio.h>
#include "moser_transport.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      char msg[256];                                                  \
      mt_last_error(msg, sizeof msg);                                 \
      fprintf(stderr, "check failed at line %d: %s (%s)\n", __LINE__, \
              #cond, msg);                                            \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  MtFamily *fam = NULL;
  CHECK(mt_family_builtin("affine", "c=0.5", &fam) == MT_OK);
  double rho = 0.0;
  CHECK(mt_family_eval(fam, 0.5, 0.0, 0.0, &rho) == MT_OK);
  CHECK(fabs(rho - 0.5) < 1e-15);

  MtPipelineOptions opts;
  CHECK(mt_pipeline_defaults(&opts) == MT_OK);
  opts.mode = 2;
  MtRepresentation *rep = NULL;
  CHECK(mt_representation_build(fam, &opts, &rep) == MT_OK);
  double t = 0.5, image = 0.0;
  CHECK(mt_representation_eval(rep, 0.5, NULL, &t, 1, NULL, &image) == MT_OK);
  CHECK(fabs(image - (sqrt(5.0) - 1.0) / 2.0) < 1e-4);

  MtQuantile *q = NULL;
  CHECK(mt_quantile_build(fam, 0.5, 1024, &q) == MT_OK);
  double p = 0.0;
  CHECK(mt_quantile_inverse(q, 2.0, &p) == MT_OUT_OF_DOMAIN);

  mt_quantile_free(q);
  mt_representation_free(rep);
  mt_family_free(fam);
  printf("ok %s\n", mt_version());
  return 0;
}
