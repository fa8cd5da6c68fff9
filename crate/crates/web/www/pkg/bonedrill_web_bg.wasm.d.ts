/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_deflectionview_free: (a: number, b: number) => void;
export const deflection: (a: number, b: number, c: number, d: number) => [number, number, number];
export const deflectionview_height: (a: number) => number;
export const deflectionview_json: (a: number) => [number, number];
export const deflectionview_rgba: (a: number) => [number, number];
export const deflectionview_width: (a: number) => number;
export const spline: (a: number, b: number, c: number) => [number, number, number, number];
export const trial: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
