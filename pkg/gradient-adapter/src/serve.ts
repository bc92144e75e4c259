/** Start the gradient service.  Port from GRADIENT_ADAPTER_PORT (default 4717). */

import { createService } from "./service.js";

const port = Number(process.env.GRADIENT_ADAPTER_PORT ?? 4717);
const { app, model } = createService();
app.listen(port, () => {
  console.log(
    `gradient-adapter on :${port} (layers=${model.cfg.nLayers}, d=${model.cfg.dModel})`,
  );
});
